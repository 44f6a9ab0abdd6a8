//! Semi-closed transition density of a scalar diffusion after the Lamperti
//! change of variables:
//!
//! `pi(t, x, y) = gauss(t, s(x), s(y)) / sigma(y) * exp(A(s(y)) - A(s(x))) * H`
//!
//! where `A' = mu` and `H = E[exp(-t int_0^1 h(xi + z (eta - xi) + sqrt(t) W_z) dz)]`
//! over a standard Brownian bridge `W`. `H` is estimated by inner Monte Carlo.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian_density;
use super::lamperti::LampertiMap;
use crate::error::{Error, Result};
use crate::simulate::SdeCoefficients;

/// Which potential enters the bridge expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HVariant {
    /// `h = (mu^2 + mu') / 2`, the Girsanov / Feynman-Kac potential.
    Standard,
    /// `h = (mu^2 + mu'^2) / 2`.
    AsPrinted,
}

impl HVariant {
    pub fn label(self) -> &'static str {
        match self {
            HVariant::Standard => "standard",
            HVariant::AsPrinted => "as-printed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZmirouConfig {
    /// Brownian bridges per `H` estimate (at least 100).
    pub inner_samples: usize,
    /// Relative finite-difference step: `delta = fd_step * (1 + |xi|)`.
    pub fd_step: f64,
    pub h_variant: HVariant,
    /// Gauss-Legendre nodes per panel for `s(x)`.
    pub quadrature_nodes: usize,
    /// Time nodes of each bridge on `[0, 1]`.
    pub bridge_nodes: usize,
}

impl Default for ZmirouConfig {
    fn default() -> Self {
        Self {
            inner_samples: 10_000,
            fd_step: 1e-3,
            h_variant: HVariant::Standard,
            quadrature_nodes: 16,
            bridge_nodes: 256,
        }
    }
}

impl ZmirouConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_samples < 100 {
            return Err(Error::invalid(format!(
                "inner_samples = {} (at least 100 required)",
                self.inner_samples
            )));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::invalid(format!("fd_step = {} must be positive", self.fd_step)));
        }
        if self.quadrature_nodes == 0 || self.bridge_nodes < 2 {
            return Err(Error::invalid("quadrature_nodes >= 1 and bridge_nodes >= 2 required"));
        }
        Ok(())
    }
}

/// Standard Brownian bridges on `[0, 1]` sampled at `nodes + 1` equally
/// spaced points, stored row-major.
#[derive(Debug, Clone)]
pub struct BridgeDraws {
    nodes: usize,
    values: Vec<f64>,
}

impl BridgeDraws {
    pub fn sample(samples: usize, nodes: usize, rng: &mut dyn RngCore) -> Self {
        let dz = 1.0 / nodes as f64;
        let sd = dz.sqrt();
        let mut values = Vec::with_capacity(samples * (nodes + 1));
        let mut row = vec![0.0; nodes + 1];
        for _ in 0..samples {
            for k in 1..=nodes {
                let n: f64 = rng.sample(StandardNormal);
                row[k] = row[k - 1] + sd * n;
            }
            let end = row[nodes];
            for (k, w) in row.iter().enumerate() {
                values.push(w - k as f64 * dz * end);
            }
        }
        Self { nodes, values }
    }

    pub fn samples(&self) -> usize {
        self.values.len() / (self.nodes + 1)
    }

    /// `exp(-t int_0^1 h(xi + z (eta - xi) + sqrt(t) W_z) dz)` per bridge, by
    /// the trapezoid rule on the bridge nodes.
    pub fn weights(&self, h: &dyn Fn(f64) -> f64, t: f64, xi: f64, eta: f64) -> Vec<f64> {
        let k = self.nodes;
        let dz = 1.0 / k as f64;
        let st = t.sqrt();
        self.values
            .chunks_exact(k + 1)
            .map(|row| {
                let mut acc = 0.0;
                for (j, w) in row.iter().enumerate() {
                    let z = j as f64 * dz;
                    let v = h(xi + z * (eta - xi) + st * w);
                    acc += if j == 0 || j == k { 0.5 * v } else { v };
                }
                (-t * acc * dz).exp()
            })
            .collect()
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Monte Carlo estimate of the bridge expectation `H` for an arbitrary
/// potential, with its standard error.
pub fn bridge_expectation(
    h: &dyn Fn(f64) -> f64,
    t: f64,
    xi: f64,
    eta: f64,
    nodes: usize,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    if !(t > 0.0) || samples < 2 || nodes < 2 {
        return Err(Error::invalid(
            "bridge_expectation needs t > 0, samples >= 2, nodes >= 2",
        ));
    }
    let draws = BridgeDraws::sample(samples, nodes, rng);
    let w = draws.weights(h, t, xi, eta);
    let (m, se) = mean_stderr(&w);
    if !m.is_finite() {
        return Err(Error::numerical("bridge expectation", format!("H = {m}")));
    }
    Ok((m, se))
}

/// Everything about one coefficient set that does not depend on `(t, x, y)`:
/// the Lamperti map and a tabulated potential `h`.
#[derive(Debug, Clone)]
pub struct ZmirouKernel {
    map: LampertiMap,
    cfg: ZmirouConfig,
    mu_vanishes: bool,
    h_lo: f64,
    h_step: f64,
    h_table: Vec<f64>,
}

const H_TABLE_CELLS: usize = 8192;

impl ZmirouKernel {
    pub fn new(coeffs: &SdeCoefficients, cfg: ZmirouConfig) -> Result<Self> {
        cfg.validate()?;
        let map = LampertiMap::new(coeffs, cfg.quadrature_nodes)?;
        let mu_vanishes = map.mu_vanishes()?;
        let mut kernel = Self {
            map,
            cfg,
            mu_vanishes,
            h_lo: 0.0,
            h_step: 1.0,
            h_table: Vec::new(),
        };
        if !mu_vanishes {
            let (a, b) = kernel.map.s_range()?;
            kernel.h_lo = a;
            kernel.h_step = (b - a) / H_TABLE_CELLS as f64;
            kernel.h_table = (0..=H_TABLE_CELLS)
                .map(|i| kernel.h_direct(a + i as f64 * kernel.h_step))
                .collect::<Result<_>>()?;
        }
        Ok(kernel)
    }

    pub fn config(&self) -> &ZmirouConfig {
        &self.cfg
    }

    pub fn lamperti(&self) -> &LampertiMap {
        &self.map
    }

    pub fn mu_vanishes(&self) -> bool {
        self.mu_vanishes
    }

    fn h_direct(&self, z: f64) -> Result<f64> {
        let mu = self.map.mu(z)?;
        let dmu = self.map.mu_prime(z)?;
        Ok(match self.cfg.h_variant {
            HVariant::Standard => 0.5 * (mu * mu + dmu),
            HVariant::AsPrinted => 0.5 * (mu * mu + dmu * dmu),
        })
    }

    /// The potential `h` (tabulated inside the domain, direct outside).
    pub fn h(&self, z: f64) -> f64 {
        if self.mu_vanishes {
            return 0.0;
        }
        let u = (z - self.h_lo) / self.h_step;
        if u >= 0.0 && u < H_TABLE_CELLS as f64 {
            let i = u as usize;
            let f = u - i as f64;
            return self.h_table[i] + f * (self.h_table[i + 1] - self.h_table[i]);
        }
        self.h_direct(z).unwrap_or(f64::NAN)
    }

    fn check(t: f64, x: f64, y: f64) -> Result<()> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("transition time t = {t} must be positive")));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid(format!("non-finite state ({x}, {y})")));
        }
        Ok(())
    }

    /// `(pi(t, x, y), stderr)`.
    pub fn density(&self, t: f64, x: f64, y: f64, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
        Self::check(t, x, y)?;
        let xi = self.map.s(x)?;
        let eta = self.map.s(y)?;
        let sigma_y = self.map.coeffs().sigma(y);
        let base = gaussian_density(t, xi, eta)? / sigma_y;
        if self.mu_vanishes {
            return Ok((base, 0.0));
        }
        let draws = BridgeDraws::sample(self.cfg.inner_samples, self.cfg.bridge_nodes, rng);
        self.density_with(&draws, t, xi, eta, base)
    }

    /// Density on a set of `y` values sharing one set of bridges.
    pub fn density_curve(&self, t: f64, x: f64, ys: &[f64], rng: &mut dyn RngCore) -> Result<Vec<(f64, f64)>> {
        Self::check(t, x, 0.0)?;
        let xi = self.map.s(x)?;
        let draws =
            (!self.mu_vanishes).then(|| BridgeDraws::sample(self.cfg.inner_samples, self.cfg.bridge_nodes, rng));
        ys.iter()
            .map(|&y| {
                Self::check(t, x, y)?;
                let eta = self.map.s(y)?;
                let base = gaussian_density(t, xi, eta)? / self.map.coeffs().sigma(y);
                match &draws {
                    None => Ok((base, 0.0)),
                    Some(d) => self.density_with(d, t, xi, eta, base),
                }
            })
            .collect()
    }

    fn density_with(&self, draws: &BridgeDraws, t: f64, xi: f64, eta: f64, base: f64) -> Result<(f64, f64)> {
        let h = |z: f64| self.h(z);
        let w = draws.weights(&h, t, xi, eta);
        let (hm, hse) = mean_stderr(&w);
        if !hm.is_finite() || !hse.is_finite() {
            return Err(Error::numerical("zmirou density", format!("inner estimate H = {hm}")));
        }
        let factor = base * self.map.mu_primitive_diff(xi, eta)?.exp();
        let value = factor * hm;
        if !value.is_finite() {
            return Err(Error::numerical("zmirou density", format!("density = {value}")));
        }
        Ok((value, factor * hse))
    }

    /// `((1/pi) d pi / dx (t, x, y), stderr)`, with `dH/dxi` from a central
    /// difference on common bridges and the ratio's error by the delta method.
    pub fn score(&self, t: f64, x: f64, y: f64, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
        Self::check(t, x, y)?;
        let xi = self.map.s(x)?;
        let eta = self.map.s(y)?;
        let sigma_x = self.map.coeffs().sigma(x);
        if self.mu_vanishes {
            return Ok(((eta - xi) / t / sigma_x, 0.0));
        }
        let draws = BridgeDraws::sample(self.cfg.inner_samples, self.cfg.bridge_nodes, rng);
        let h = |z: f64| self.h(z);
        let delta = self.cfg.fd_step * (1.0 + xi.abs());
        let centre = draws.weights(&h, t, xi, eta);
        let up = draws.weights(&h, t, xi + delta, eta);
        let down = draws.weights(&h, t, xi - delta, eta);
        let diff: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * delta)).collect();
        let n = centre.len() as f64;
        let (hm, _) = mean_stderr(&centre);
        let (dm, _) = mean_stderr(&diff);
        if !(hm > 0.0) || !hm.is_finite() || !dm.is_finite() {
            return Err(Error::numerical(
                "zmirou score",
                format!("H estimate {hm} is not positive; raise inner_samples"),
            ));
        }
        let ratio = dm / hm;
        // delta method for dm / hm
        let mut var = 0.0;
        for (c, d) in centre.iter().zip(&diff) {
            let r = (d - dm) - ratio * (c - hm);
            var += r * r;
        }
        let se_ratio = (var / (n - 1.0) / n).sqrt() / hm;
        let mu_xi = self.map.mu(xi)?;
        let value = ((eta - xi) / t + ratio - mu_xi) / sigma_x;
        if !value.is_finite() {
            return Err(Error::numerical("zmirou score", format!("score = {value}")));
        }
        Ok((value, se_ratio / sigma_x))
    }
}

/// One-shot density evaluation (builds a kernel; prefer [`ZmirouKernel`] for
/// repeated calls).
pub fn zmirou_density(
    coeffs: &SdeCoefficients,
    t: f64,
    x: f64,
    y: f64,
    cfg: &ZmirouConfig,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    ZmirouKernel::new(coeffs, *cfg)?.density(t, x, y, rng)
}

/// One-shot score evaluation.
pub fn zmirou_score(
    coeffs: &SdeCoefficients,
    t: f64,
    x: f64,
    y: f64,
    cfg: &ZmirouConfig,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    ZmirouKernel::new(coeffs, *cfg)?.score(t, x, y, rng)
}

/// Exact Ornstein-Uhlenbeck (`b = -x`, `sigma = 1`) transition density.
pub fn ou_exact_density(t: f64, x: f64, y: f64) -> f64 {
    let m = x * (-t).exp();
    let v = 0.5 * (1.0 - (-2.0 * t).exp());
    (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn config_validation() {
        let mut c = ZmirouConfig::default();
        assert!(c.validate().is_ok());
        c.inner_samples = 99;
        assert!(c.validate().is_err());
        let c = ZmirouConfig {
            fd_step: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_potential_gives_exponential() {
        for c in [0.0f64, 0.7, -1.3] {
            let (m, se) = bridge_expectation(&|_| c, 0.4, 0.1, -0.2, 32, 200, &mut rng(1)).unwrap();
            assert!((m - (-0.4f64 * c).exp()).abs() < 1e-12);
            assert!(se < 1e-12);
        }
    }

    #[test]
    fn bridges_have_bridge_covariance() {
        let d = BridgeDraws::sample(40_000, 4, &mut rng(2));
        let mut s11 = 0.0;
        let mut s13 = 0.0;
        for row in d.values.chunks_exact(5) {
            assert_eq!(row[0], 0.0);
            assert!(row[4].abs() < 1e-15);
            s11 += row[1] * row[1];
            s13 += row[1] * row[3];
        }
        let n = d.samples() as f64;
        // Var W_{1/4} = 3/16, Cov(W_{1/4}, W_{3/4}) = 1/16
        assert!((s11 / n - 3.0 / 16.0).abs() < 0.006);
        assert!((s13 / n - 1.0 / 16.0).abs() < 0.006);
    }

    #[test]
    fn brownian_case_is_the_heat_kernel_bit_for_bit() {
        let k = ZmirouKernel::new(&SdeCoefficients::brownian(), ZmirouConfig::default()).unwrap();
        assert!(k.mu_vanishes());
        for (t, x, y) in [(1.0, 0.0, 0.0), (0.3, -0.2, 0.9), (2.0, 1.5, -3.0)] {
            let (v, se) = k.density(t, x, y, &mut rng(0)).unwrap();
            assert_eq!(v, gaussian_density(t, x, y).unwrap());
            assert_eq!(se, 0.0);
            let (s, se) = k.score(t, x, y, &mut rng(0)).unwrap();
            assert_eq!(s, (y - x) / t);
            assert_eq!(se, 0.0);
        }
    }

    #[test]
    fn ou_density_matches_exact_with_standard_potential() {
        let k = ZmirouKernel::new(&SdeCoefficients::ornstein_uhlenbeck(), ZmirouConfig::default()).unwrap();
        let (v, se) = k.density(0.5, 0.0, 0.3, &mut rng(42)).unwrap();
        let exact = ou_exact_density(0.5, 0.0, 0.3);
        assert!((v - exact).abs() < 3.0 * se, "{v} vs {exact} (se {se})");
    }

    #[test]
    fn ou_score_matches_log_density_difference() {
        let cfg = ZmirouConfig {
            inner_samples: 4000,
            ..Default::default()
        };
        let k = ZmirouKernel::new(&SdeCoefficients::ornstein_uhlenbeck(), cfg).unwrap();
        let (t, x, y): (f64, f64, f64) = (0.5, 0.0, 0.3);
        let (s, se) = k.score(t, x, y, &mut rng(5)).unwrap();
        let d = 1e-3;
        let (up, _) = k.density(t, x + d, y, &mut rng(5)).unwrap();
        let (dn, _) = k.density(t, x - d, y, &mut rng(5)).unwrap();
        let fd = (up.ln() - dn.ln()) / (2.0 * d);
        assert!((s - fd).abs() < 3.0 * se + 1e-4, "{s} vs {fd} (se {se})");
        // exact OU score for comparison
        let e = (-t).exp();
        let v = 0.5 * (1.0 - (-2.0 * t).exp());
        let exact = (y - x * e) * e / v;
        assert!((s - exact).abs() < 4.0 * se + 2e-3, "{s} vs exact {exact}");
    }

    #[test]
    fn ou_density_integrates_to_one() {
        let cfg = ZmirouConfig {
            inner_samples: 2000,
            ..Default::default()
        };
        let k = ZmirouKernel::new(&SdeCoefficients::ornstein_uhlenbeck(), cfg).unwrap();
        for t in [0.25, 0.5] {
            let n = 400;
            let (lo, hi) = (-5.0, 5.0);
            let dy = (hi - lo) / n as f64;
            let ys: Vec<f64> = (0..=n).map(|i| lo + i as f64 * dy).collect();
            let curve = k.density_curve(t, 0.0, &ys, &mut rng(7)).unwrap();
            let mut total = 0.0;
            let mut err = 0.0;
            for (i, (v, se)) in curve.iter().enumerate() {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 } * dy;
                total += w * v;
                err += w * se;
            }
            assert!((total - 1.0).abs() < 3.0 * err + 1e-6, "t={t}: {total} (err {err})");
        }
    }

    #[test]
    fn nonconstant_sigma_density_is_positive_and_normalised() {
        let cfg = ZmirouConfig {
            inner_samples: 1000,
            bridge_nodes: 64,
            ..Default::default()
        };
        let k = ZmirouKernel::new(&SdeCoefficients::bounded_sigmoid_drift(), cfg).unwrap();
        let n = 300;
        let dy = 12.0 / n as f64;
        let ys: Vec<f64> = (0..=n).map(|i| -6.0 + i as f64 * dy).collect();
        let curve = k.density_curve(0.3, 0.4, &ys, &mut rng(3)).unwrap();
        assert!(curve.iter().all(|(v, _)| *v > 0.0));
        let total: f64 = curve.iter().map(|(v, _)| v * dy).sum();
        assert!((total - 1.0).abs() < 0.02, "{total}");
    }
}
