//! Small statistical helpers: means, standard errors, p-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Sample mean and its standard error `sd / sqrt(n)`. An empty or single
/// sample has standard error 0.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (m, (v / n as f64).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    mean_stderr(xs).0
}

/// Unbiased sample variance (0 for fewer than two points).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Two-sided normal p-value `2 (1 - Phi(|z|))`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    (2.0 * Normal::standard().sf(z.abs())).min(1.0)
}

/// Two-sided Student-t p-value with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::invalid(format!("t test with df = {df}")));
    }
    if !t.is_finite() {
        return Ok(if t.is_nan() { 1.0 } else { 0.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Weighted least-squares slope of `y` on `x` with weights `1 / se^2`, its
/// t statistic against zero, and the two-sided p-value on `n - 2` degrees of
/// freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub slope: f64,
    pub slope_stderr: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

pub fn trend_test(x: &[f64], y: &[f64]) -> Result<TrendTest> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::invalid("trend test needs at least three (x, y) pairs"));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("trend test with constant x"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - icept - slope * a).powi(2)).sum();
    let df = (n - 2) as f64;
    let se = (rss / df / sxx).sqrt();
    let t_stat = if se > 0.0 {
        slope / se
    } else if slope == 0.0 {
        0.0
    } else {
        slope.signum() * f64::INFINITY
    };
    Ok(TrendTest {
        slope,
        slope_stderr: se,
        t_stat,
        p_value: t_two_sided_p(t_stat, df)?,
    })
}
