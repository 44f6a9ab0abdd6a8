//! Monte Carlo machinery for progressively enlarging a Brownian filtration
//! with another process (typically a time-reversed diffusion): path
//! simulation, transition-density scores, discretized and limiting
//! compensators, conditional-expectation regressions, and the statistical
//! tests that check the resulting semimartingale decompositions.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod converge;
pub mod density;
pub mod error;
pub mod expand;
pub mod grid;
pub mod mgtest;
pub mod path;
pub mod quadrature;
pub mod regress;
pub mod rng;
pub mod simulate;
pub mod stats;

mod par;

pub use error::{Error, Result};
pub use grid::{make_dyadic_subdivision, make_uniform_grid, Subdivision, TimeGrid};
pub use path::{discretize_path, Path, PathEnsemble};
pub use rng::RngContract;
pub use simulate::SdeCoefficients;
