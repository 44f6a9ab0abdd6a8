//! Browser demo. The computations are plain functions so they can be tested
//! natively; the `wasm_bindgen` wrappers only convert errors and arrays.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use filtex_core::density::{
    brownian_phi, estimate_phi, ou_exact_density, HVariant, ScoreFunction, ZmirouConfig, ZmirouKernel,
};
use filtex_core::expand::{compensator_an, compensator_limit};
use filtex_core::simulate::{brownian_ensemble, sample_brownian};
use filtex_core::{make_dyadic_subdivision, make_uniform_grid, RngContract, SdeCoefficients};

pub const GRID_STEPS: usize = 1024;
pub const PHI_GRID_STEPS: usize = 1000;

/// One Brownian path with its reversal compensators, all on the grid up to
/// `t_max`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct ReversalPaths {
    t: Vec<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
    a_n: Vec<f64>,
    sup_error: f64,
}

#[wasm_bindgen]
impl ReversalPaths {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn b(&self) -> Vec<f64> {
        self.b.clone()
    }

    /// Limit compensator.
    #[wasm_bindgen(getter)]
    pub fn a(&self) -> Vec<f64> {
        self.a.clone()
    }

    /// Compensator along the dyadic subdivision.
    #[wasm_bindgen(getter)]
    pub fn a_n(&self) -> Vec<f64> {
        self.a_n.clone()
    }

    /// `B - A`.
    #[wasm_bindgen(getter)]
    pub fn m(&self) -> Vec<f64> {
        self.b.iter().zip(&self.a).map(|(b, a)| b - a).collect()
    }

    #[wasm_bindgen(getter)]
    pub fn sup_error(&self) -> f64 {
        self.sup_error
    }
}

pub fn reversal(seed: u32, level: u32, t_max: f64) -> filtex_core::Result<ReversalPaths> {
    let grid = Arc::new(make_uniform_grid(1.0, GRID_STEPS)?);
    let x = sample_brownian(&grid, &RngContract::new(seed.into()), 0);
    let score = ScoreFunction::gaussian();
    let limit = compensator_limit(&x, &score, t_max)?;
    let a_n = compensator_an(&x, &make_dyadic_subdivision(level, t_max)?, &score, t_max)?;
    let len = limit.trajectory.len();
    Ok(ReversalPaths {
        t: limit.trajectory.grid().times().to_vec(),
        b: x.values()[..len].to_vec(),
        a: limit.trajectory.values().to_vec(),
        a_n: a_n.trajectory.values().to_vec(),
        sup_error: a_n.trajectory.sup_distance(&limit.trajectory)?,
    })
}

/// Rows `[lag, estimate, stderr, sqrt(2/pi)/sqrt(lag)]` flattened, for lags
/// that are whole multiples of `1/1000`.
pub fn phi_curve(seed: u32, paths: usize, lags: &[f64]) -> filtex_core::Result<Vec<f64>> {
    let grid = Arc::new(make_uniform_grid(1.0, PHI_GRID_STEPS)?);
    let x = brownian_ensemble(&grid, RngContract::new(seed.into()), paths)?;
    let times = grid.times();
    let mut out = Vec::with_capacity(4 * lags.len());
    for &lag in lags {
        let k = (lag * PHI_GRID_STEPS as f64).round() as usize;
        if k == 0 || k > PHI_GRID_STEPS {
            return Err(filtex_core::Error::InvalidArgument(format!("lag {lag} outside (0, 1]")));
        }
        let exact = times[PHI_GRID_STEPS] - times[PHI_GRID_STEPS - k];
        let (est, se) = estimate_phi(&ScoreFunction::gaussian(), &x, times[PHI_GRID_STEPS - k], 1.0)?;
        out.extend([exact, est, se, brownian_phi(exact)]);
    }
    Ok(out)
}

/// Rows `[y, zmirou density, stderr, exact OU density]` flattened for the
/// Ornstein-Uhlenbeck transition from `x` over time `t`.
pub fn ou_density(
    t: f64,
    x: f64,
    inner_samples: usize,
    as_printed: bool,
    seed: u32,
    ys: &[f64],
) -> filtex_core::Result<Vec<f64>> {
    let cfg = ZmirouConfig {
        inner_samples,
        bridge_nodes: 64,
        h_variant: if as_printed {
            HVariant::AsPrinted
        } else {
            HVariant::Standard
        },
        ..ZmirouConfig::default()
    };
    let kernel = ZmirouKernel::new(&SdeCoefficients::ornstein_uhlenbeck(), cfg)?;
    let mut rng = RngContract::new(seed.into()).stream(0);
    let curve = kernel.density_curve(t, x, ys, &mut rng)?;
    Ok(ys
        .iter()
        .zip(curve)
        .flat_map(|(&y, (d, se))| [y, d, se, ou_exact_density(t, x, y)])
        .collect())
}

fn js(e: filtex_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = reversalPaths)]
pub fn reversal_paths_js(seed: u32, level: u32, t_max: f64) -> Result<ReversalPaths, JsError> {
    reversal(seed, level, t_max).map_err(js)
}

#[wasm_bindgen(js_name = phiCurve)]
pub fn phi_curve_js(seed: u32, paths: u32, lags: Vec<f64>) -> Result<Vec<f64>, JsError> {
    phi_curve(seed, paths as usize, &lags).map_err(js)
}

#[wasm_bindgen(js_name = ouDensity)]
pub fn ou_density_js(
    t: f64,
    x: f64,
    inner_samples: u32,
    as_printed: bool,
    seed: u32,
    ys: Vec<f64>,
) -> Result<Vec<f64>, JsError> {
    ou_density(t, x, inner_samples as usize, as_printed, seed, &ys).map_err(js)
}
