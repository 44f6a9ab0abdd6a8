//! The Lamperti change of variables `s(x) = int_0^x 1/sigma(y) dy`, its
//! inverse `g = s^{-1}`, and the unit-diffusion drift
//! `mu = (b / sigma) o g - sigma' o g / 2`.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, gauss_legendre};
use crate::simulate::SdeCoefficients;

const PANEL: f64 = 1.0 / 16.0;

/// Standalone `s(x)` by adaptive Simpson on `[0, x]`; fails with a domain
/// violation if `sigma <= 0` anywhere the rule samples.
pub fn lamperti_transform(coeffs: &SdeCoefficients, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("lamperti_transform at non-finite x = {x}")));
    }
    let bad = Cell::new(None::<f64>);
    let integrand = |y: f64| {
        let s = coeffs.sigma(y);
        if !(s > 0.0) && bad.get().is_none() {
            bad.set(Some(y));
        }
        1.0 / s
    };
    let value = adaptive_simpson(&integrand, 0.0, x, 1e-13, 48);
    if let Some(y) = bad.get() {
        return Err(Error::DomainViolation(format!(
            "sigma({y}) = {} is not positive on the integration range",
            coeffs.sigma(y)
        )));
    }
    Ok(value)
}

/// `mu(z)` at a point given in Lamperti coordinates. Builds a fresh map; use
/// [`LampertiMap::mu`] for repeated evaluation.
pub fn drift_mu(coeffs: &SdeCoefficients, z: f64) -> Result<f64> {
    LampertiMap::new(coeffs, 16)?.mu(z)
}

/// Tabulated Lamperti map on the coefficients' declared domain.
///
/// `s` is accumulated panel by panel with a fixed Gauss-Legendre rule, so a
/// lookup costs one partial panel. Constant `sigma` is detected and handled
/// exactly (`s(x) = x / c`).
#[derive(Debug, Clone)]
pub struct LampertiMap {
    coeffs: SdeCoefficients,
    constant_sigma: Option<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lo: f64,
    panel: f64,
    /// `s` at the panel knots `lo + k * panel`.
    knots_s: Vec<f64>,
}

impl LampertiMap {
    /// `order` is the Gauss-Legendre node count per panel.
    pub fn new(coeffs: &SdeCoefficients, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        let (lo, hi) = coeffs.domain();
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(Error::invalid(format!(
                "state domain [{lo}, {hi}] must contain the Lamperti origin 0"
            )));
        }
        let probes: Vec<f64> = coeffs.probe_points(257).map(|x| coeffs.sigma(x)).collect();
        if let Some((i, s)) = probes.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
            return Err(Error::DomainViolation(format!(
                "sigma = {s} at probe {i} of the declared domain"
            )));
        }
        let constant_sigma = probes.iter().all(|&s| s == probes[0]).then_some(probes[0]);
        let (nodes, weights) = gauss_legendre(order);
        let mut map = Self {
            coeffs: coeffs.clone(),
            constant_sigma,
            nodes,
            weights,
            lo,
            panel: PANEL,
            knots_s: Vec::new(),
        };
        if constant_sigma.is_none() {
            let panels = ((hi - lo) / PANEL).ceil() as usize;
            let mut acc = vec![0.0; panels + 1];
            for k in 0..panels {
                let a = lo + k as f64 * PANEL;
                acc[k + 1] = acc[k] + map.panel_integral(a, a + PANEL)?;
            }
            // shift so that s(0) = 0
            let k0 = ((0.0 - lo) / PANEL).floor() as usize;
            let c0 = acc[k0] + map.panel_integral(lo + k0 as f64 * PANEL, 0.0)?;
            map.knots_s = acc.into_iter().map(|c| c - c0).collect();
        }
        Ok(map)
    }

    pub fn coeffs(&self) -> &SdeCoefficients {
        &self.coeffs
    }

    pub fn constant_sigma(&self) -> Option<f64> {
        self.constant_sigma
    }

    fn panel_integral(&self, a: f64, b: f64) -> Result<f64> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let y = mid + half * x;
            let s = self.coeffs.sigma(y);
            if !(s > 0.0) {
                return Err(Error::DomainViolation(format!("sigma({y}) = {s} is not positive")));
            }
            acc += w / s;
        }
        Ok(half * acc)
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let n = ((b - a).abs() / self.panel).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            acc += self.panel_integral(a + k as f64 * h, a + (k + 1) as f64 * h)?;
        }
        Ok(acc)
    }

    /// `s(x)`.
    pub fn s(&self, x: f64) -> Result<f64> {
        if let Some(c) = self.constant_sigma {
            return Ok(x / c);
        }
        let k = ((x - self.lo) / self.panel).floor();
        if k >= 0.0 && (k as usize) < self.knots_s.len() - 1 {
            let k = k as usize;
            let a = self.lo + k as f64 * self.panel;
            return Ok(self.knots_s[k] + self.panel_integral(a, x)?);
        }
        self.integral(0.0, x)
    }

    /// `g(z) = s^{-1}(z)` by safeguarded Newton inside a bracket.
    pub fn g(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::invalid(format!("g at non-finite z = {z}")));
        }
        if let Some(c) = self.constant_sigma {
            return Ok(c * z);
        }
        let (mut a, mut b) = self.bracket(z)?;
        let mut x = 0.5 * (a + b);
        for _ in 0..100 {
            let f = self.s(x)? - z;
            if f == 0.0 {
                return Ok(x);
            }
            if f < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let newton = x - f * self.coeffs.sigma(x);
            x = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (b - a) <= 1e-15 * (1.0 + x.abs()) || f.abs() <= 1e-15 * (1.0 + z.abs()) {
                return Ok(x);
            }
        }
        Ok(x)
    }

    fn bracket(&self, z: f64) -> Result<(f64, f64)> {
        let last = self.knots_s.len() - 1;
        if z >= self.knots_s[0] && z <= self.knots_s[last] {
            let k = self.knots_s.partition_point(|&s| s <= z).clamp(1, last);
            let a = self.lo + (k - 1) as f64 * self.panel;
            return Ok((a, a + self.panel));
        }
        // outside the table: march outward until s changes sign
        let (lo, hi) = self.coeffs.domain();
        let (mut a, mut width) = if z > self.knots_s[last] {
            (hi, hi - lo)
        } else {
            (lo, -(hi - lo))
        };
        for _ in 0..64 {
            let b = a + width;
            let sb = self.s(b)?;
            if (width > 0.0 && sb >= z) || (width < 0.0 && sb <= z) {
                return Ok(if width > 0.0 { (a, b) } else { (b, a) });
            }
            a = b;
            width *= 2.0;
        }
        Err(Error::numerical("lamperti inverse", format!("no bracket for z = {z}")))
    }

    /// `mu(z) = b(g(z)) / sigma(g(z)) - sigma'(g(z)) / 2`.
    pub fn mu(&self, z: f64) -> Result<f64> {
        let x = self.g(z)?;
        Ok(self.coeffs.b(x) / self.coeffs.sigma(x) - 0.5 * self.coeffs.sigma_prime(x))
    }

    /// Central difference of `mu` with step `1e-5 (1 + |z|)`.
    pub fn mu_prime(&self, z: f64) -> Result<f64> {
        let h = 1e-5 * (1.0 + z.abs());
        Ok((self.mu(z + h)? - self.mu(z - h)?) / (2.0 * h))
    }

    /// Range of `s` over the declared domain.
    pub fn s_range(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self.coeffs.domain();
        Ok((self.s(lo)?, self.s(hi)?))
    }

    /// True when `mu` is identically zero on probe points across the domain,
    /// in which case the Zmirou correction `U` is exactly one.
    pub fn mu_vanishes(&self) -> Result<bool> {
        let (a, b) = self.s_range()?;
        for i in 0..129 {
            let z = a + (b - a) * i as f64 / 128.0;
            if self.mu(z)? != 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `A(to) - A(from)` for a primitive `A` of `mu`, by adaptive Simpson.
    pub fn mu_primitive_diff(&self, from: f64, to: f64) -> Result<f64> {
        let failure = Cell::new(None::<Error>);
        let f = |z: f64| match self.mu(z) {
            Ok(v) => v,
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        };
        let v = adaptive_simpson(&f, from, to, 1e-12, 40);
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }
}
