//! Holds the acceptance suite (`tests/acceptance.rs`); there is no library
//! code. Run it with `cargo test -p filtex-verify --test acceptance`.
