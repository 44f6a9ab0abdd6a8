//! Transition densities, their `x`-log-derivatives ("scores"), and the
//! `phi`-bound `E|score(t - s, X_s, X_t)| <= phi(t - s)`.

mod lamperti;
mod zmirou;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::PathEnsemble;
use crate::rng::hash_f64s;
use crate::simulate::SdeCoefficients;

pub use lamperti::{drift_mu, lamperti_transform, LampertiMap};
pub use zmirou::{
    bridge_expectation, ou_exact_density, zmirou_density, zmirou_score, BridgeDraws, HVariant, ZmirouConfig,
    ZmirouKernel,
};

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("transition time t = {t} must be positive")))
    }
}

/// Heat kernel `exp(-(y - x)^2 / 2t) / sqrt(2 pi t)`.
pub fn gaussian_density(t: f64, x: f64, y: f64) -> Result<f64> {
    check_time(t)?;
    let d = y - x;
    Ok((-d * d / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
}

/// `(y - x) / t`.
pub fn gaussian_score(t: f64, x: f64, y: f64) -> Result<f64> {
    check_time(t)?;
    Ok((y - x) / t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Gaussian,
    Zmirou,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    pub value: f64,
    pub stderr: f64,
}

type Evaluator = Arc<dyn Fn(f64, f64, f64) -> Result<ScoreValue> + Send + Sync>;

/// `(t, x, y) -> (1/pi) d pi / dx (t, x, y)` with a standard error (zero for
/// closed forms). Every kind is a pure function of its inputs: the Zmirou
/// kind seeds its inner Monte Carlo from a hash of `(seed, t, x, y)`.
#[derive(Clone)]
pub struct ScoreFunction {
    kind: ScoreKind,
    label: String,
    eval: Evaluator,
}

impl fmt::Debug for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreFunction")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .finish()
    }
}

impl ScoreFunction {
    pub fn gaussian() -> Self {
        Self {
            kind: ScoreKind::Gaussian,
            label: "gaussian".into(),
            eval: Arc::new(|t, x, y| {
                Ok(ScoreValue {
                    value: gaussian_score(t, x, y)?,
                    stderr: 0.0,
                })
            }),
        }
    }

    pub fn zmirou(kernel: Arc<ZmirouKernel>, seed: u64) -> Self {
        let closed = kernel.mu_vanishes();
        Self {
            kind: if closed { ScoreKind::Gaussian } else { ScoreKind::Zmirou },
            label: format!("zmirou/{}", kernel.config().h_variant.label()),
            eval: Arc::new(move |t, x, y| {
                let key = hash_f64s(&[f64::from_bits(seed), t, x, y]);
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let (value, stderr) = kernel.score(t, x, y, &mut rng)?;
                Ok(ScoreValue { value, stderr })
            }),
        }
    }

    /// A closed-form user kernel (stderr reported as 0).
    pub fn user(label: impl Into<String>, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: ScoreKind::User,
            label: label.into(),
            eval: Arc::new(move |t, x, y| {
                check_time(t)?;
                Ok(ScoreValue {
                    value: f(t, x, y),
                    stderr: 0.0,
                })
            }),
        }
    }

    /// `sigma(x) * score(t, x, y)`: the density of the bracket of
    /// `log pi(t, X_s, y)` with the Brownian motion driving `X`, which is the
    /// drift the enlarged observer sees in `B` when `sigma` is not constant.
    pub fn sigma_weighted(&self, coeffs: &SdeCoefficients) -> Self {
        let inner = Arc::clone(&self.eval);
        let coeffs = coeffs.clone();
        Self {
            kind: self.kind,
            label: format!("sigma*{}", self.label),
            eval: Arc::new(move |t, x, y| {
                let v = inner(t, x, y)?;
                let w = coeffs.sigma(x);
                Ok(ScoreValue {
                    value: w * v.value,
                    stderr: w.abs() * v.stderr,
                })
            }),
        }
    }

    pub fn zero() -> Self {
        Self::user("zero", |_, _, _| 0.0)
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when evaluations are cheap and exact, so caching is pointless.
    pub fn is_closed_form(&self) -> bool {
        self.kind != ScoreKind::Zmirou
    }

    pub fn evaluate(&self, t: f64, x: f64, y: f64) -> Result<ScoreValue> {
        let v = (self.eval)(t, x, y)?;
        if !v.value.is_finite() {
            return Err(Error::numerical(
                "score",
                format!("{} score at (t={t}, x={x}, y={y}) is {}", self.label, v.value),
            ));
        }
        Ok(v)
    }

    pub fn value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Ok(self.evaluate(t, x, y)?.value)
    }
}

/// Monte Carlo `E|score(t - s, X_s, X_t)|` over an ensemble, with its
/// standard error. `s` and `t` snap to the grid from below and the score is
/// evaluated at the snapped lag.
pub fn estimate_phi(score: &ScoreFunction, ensemble: &PathEnsemble, s: f64, t: f64) -> Result<(f64, f64)> {
    if !(s >= 0.0 && s < t && t <= ensemble.grid().horizon() * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!(
            "estimate_phi needs 0 <= s < t <= {}, got s = {s}, t = {t}",
            ensemble.grid().horizon()
        )));
    }
    let grid = ensemble.grid();
    let (is, it) = match (grid.index_at_or_before(s), grid.index_at_or_before(t)) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => {
            return Err(Error::invalid(format!(
                "s = {s} and t = {t} snap to the same grid time"
            )))
        }
    };
    // the lag actually sampled once both times are snapped to the grid
    let lag = grid.times()[it] - grid.times()[is];
    let abs: Vec<f64> = ensemble
        .paths()
        .iter()
        .map(|p| Ok(score.value(lag, p.values()[is], p.values()[it])?.abs()))
        .collect::<Result<_>>()?;
    Ok(crate::stats::mean_stderr(&abs))
}

/// `phi(u) = sqrt(2 / pi) / sqrt(u)`, the Brownian bound.
pub fn brownian_phi(u: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() / u.sqrt()
}

/// Smallest `M` with `|score(t, x, y)| <= M (1 + |s(y) - s(x)| / t)` on the
/// given sweep.
pub fn fit_score_bound(score: &ScoreFunction, map: &LampertiMap, sweep: &[(f64, f64, f64)]) -> Result<f64> {
    let mut m = 0.0f64;
    for &(t, x, y) in sweep {
        let v = score.value(t, x, y)?;
        let scale = 1.0 + (map.s(y)? - map.s(x)?).abs() / t;
        m = m.max(v.abs() / scale);
    }
    Ok(m)
}
