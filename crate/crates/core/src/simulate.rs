//! Brownian motion, Euler-Maruyama diffusions, bridges and time reversal.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::path::{Path, PathEnsemble};
use crate::rng::RngContract;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Coefficients of `dX = sigma(X) dB + b(X) dt` on a declared state domain.
#[derive(Clone)]
pub struct SdeCoefficients {
    name: String,
    drift: ScalarFn,
    diffusion: ScalarFn,
    diffusion_derivative: Option<ScalarFn>,
    lower_bound: f64,
    domain: (f64, f64),
}

impl fmt::Debug for SdeCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeCoefficients")
            .field("name", &self.name)
            .field("lower_bound", &self.lower_bound)
            .field("domain", &self.domain)
            .field("has_sigma_prime", &self.diffusion_derivative.is_some())
            .finish()
    }
}

impl SdeCoefficients {
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            diffusion_derivative: None,
            lower_bound: 0.0,
            domain: (-10.0, 10.0),
        }
    }

    pub fn with_sigma_prime(mut self, d: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion_derivative = Some(Arc::new(d));
        self
    }

    /// Declared `k` with `sigma >= k > 0` on the domain.
    pub fn with_lower_bound(mut self, k: f64) -> Self {
        self.lower_bound = k;
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn b(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    /// `sigma'`, falling back to a central difference with step
    /// `1e-5 (1 + |x|)` when no derivative was supplied.
    pub fn sigma_prime(&self, x: f64) -> f64 {
        match &self.diffusion_derivative {
            Some(d) => d(x),
            None => {
                let h = 1e-5 * (1.0 + x.abs());
                (self.sigma(x + h) - self.sigma(x - h)) / (2.0 * h)
            }
        }
    }

    /// Probe points spread evenly over the domain (endpoints included).
    pub fn probe_points(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let (lo, hi) = self.domain;
        (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    /// Sampled check of `sigma >= k > 0` and boundedness of `b`, `sigma` on
    /// the declared domain.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bad state domain [{lo}, {hi}]")));
        }
        if !(self.lower_bound > 0.0) {
            return Err(Error::DomainViolation(format!(
                "{}: declared lower bound k = {} must be positive",
                self.name, self.lower_bound
            )));
        }
        for x in self.probe_points(1025) {
            let s = self.sigma(x);
            if !s.is_finite() || s < self.lower_bound {
                return Err(Error::DomainViolation(format!(
                    "{}: sigma({x}) = {s} below k = {}",
                    self.name, self.lower_bound
                )));
            }
            if !self.b(x).is_finite() {
                return Err(Error::DomainViolation(format!("{}: b({x}) is not finite", self.name)));
            }
        }
        Ok(())
    }

    /// `dX = dB`.
    pub fn brownian() -> Self {
        Self::new("brownian", |_| 0.0, |_| 1.0)
            .with_sigma_prime(|_| 0.0)
            .with_lower_bound(1.0)
    }

    /// `dX = -X dt + dB`.
    pub fn ornstein_uhlenbeck() -> Self {
        Self::new("ou", |x| -x, |_| 1.0)
            .with_sigma_prime(|_| 0.0)
            .with_lower_bound(1.0)
    }

    /// Bounded mean-reverting drift `-tanh(x)` with a state-dependent,
    /// bounded diffusion `1 + 0.3 / (1 + x^2)`.
    pub fn bounded_sigmoid_drift() -> Self {
        Self::new(
            "bounded-sigmoid-drift",
            |x: f64| -x.tanh(),
            |x: f64| 1.0 + 0.3 / (1.0 + x * x),
        )
        .with_sigma_prime(|x: f64| -0.6 * x / (1.0 + x * x).powi(2))
        .with_lower_bound(1.0)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "brownian" => Ok(Self::brownian()),
            "ou" => Ok(Self::ornstein_uhlenbeck()),
            "bounded-sigmoid-drift" => Ok(Self::bounded_sigmoid_drift()),
            other => Err(Error::invalid(format!("unknown SDE preset '{other}'"))),
        }
    }
}

/// Standard Brownian path with `B_0 = 0`, drawn from stream `path_index`.
pub fn sample_brownian(grid: &Arc<TimeGrid>, rng: &RngContract, path_index: u64) -> Path {
    let mut stream = rng.stream(path_index);
    let mut values = Vec::with_capacity(grid.len());
    let mut b = 0.0;
    values.push(b);
    for i in 0..grid.steps() {
        let z: f64 = stream.sample(StandardNormal);
        b += grid.step(i).sqrt() * z;
        values.push(b);
    }
    Path::new(grid.clone(), values).expect("gaussian increments are finite")
}

pub fn brownian_ensemble(grid: &Arc<TimeGrid>, rng: RngContract, count: usize) -> Result<PathEnsemble> {
    PathEnsemble::generate(grid.clone(), rng, count, |i| Ok(sample_brownian(grid, &rng, i)))
}

/// Euler-Maruyama driven by a supplied Brownian path, so `(B, X)` share one
/// sample point.
pub fn euler_maruyama(coeffs: &SdeCoefficients, x0: f64, driving: &Path, grid: &TimeGrid) -> Result<Path> {
    if driving.grid().times() != grid.times() {
        return Err(Error::invalid("driving path must live on the integration grid"));
    }
    let db = driving.values();
    let mut values = Vec::with_capacity(grid.len());
    let mut x = x0;
    values.push(x);
    for i in 0..grid.steps() {
        x += coeffs.b(x) * grid.step(i) + coeffs.sigma(x) * (db[i + 1] - db[i]);
        if !x.is_finite() {
            return Err(Error::numerical(
                "euler-maruyama",
                format!("non-finite state at time index {}", i + 1),
            ));
        }
        values.push(x);
    }
    Path::new(driving.shared_grid().clone(), values)
}

/// `Z_t = X_{T - t}` on the same grid; the grid must be symmetric.
pub fn reverse_path(x: &Path, horizon: f64) -> Result<Path> {
    let grid = x.grid();
    if (grid.horizon() - horizon).abs() > 1e-9 * horizon.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "path horizon {} differs from T = {horizon}",
            grid.horizon()
        )));
    }
    if !grid.is_symmetric() {
        return Err(Error::invalid("time reversal needs a grid symmetric under t -> T - t"));
    }
    let values = x.values().iter().rev().copied().collect();
    Path::new(x.shared_grid().clone(), values)
}

/// Brownian bridge pinned at `0` at both ends, built as `B_t - (t/T) B_T` from
/// the Brownian path of the same stream.
pub fn sample_brownian_bridge(grid: &Arc<TimeGrid>, rng: &RngContract, path_index: u64) -> Path {
    let b = sample_brownian(grid, rng, path_index);
    let horizon = grid.horizon();
    let end = b.last();
    let mut values: Vec<f64> = grid
        .times()
        .iter()
        .zip(b.values())
        .map(|(&t, &v)| v - t / horizon * end)
        .collect();
    *values.last_mut().expect("non-empty") = 0.0;
    Path::new(grid.clone(), values).expect("finite")
}
