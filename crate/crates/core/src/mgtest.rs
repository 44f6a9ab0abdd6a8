//! Martingale diagnostics on simulated ensembles: increment-orthogonality
//! regressions, realised quadratic variation, and quasimartingale variation.

use serde::{Deserialize, Serialize};

use crate::converge::{Observation, SigmaFieldSpec};
use crate::error::{Error, Result};
use crate::grid::Subdivision;
use crate::path::PathEnsemble;
use crate::regress::{cross_fit, ols, pairwise_mean, quadratic_terms, RegressionConfig};
use crate::rng::splitmix64;
use crate::stats::{mean_stderr, normal_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStatistic {
    pub t: f64,
    pub statistic: f64,
    /// Bonferroni-adjusted where several hypotheses are tested.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub t: f64,
    pub term: String,
    pub estimate: f64,
    pub stderr: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfigEcho {
    pub test: String,
    pub h: Option<f64>,
    pub times: Vec<f64>,
    pub feature_label: String,
    pub alpha: f64,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTestReport {
    pub per_time: Vec<TimeStatistic>,
    pub verdict: Verdict,
    pub config: TestConfigEcho,
    pub coefficients: Vec<CoefficientRow>,
    /// Ensemble mean of `sup_{t <= horizon} |M_t|`.
    pub mean_path_sup: f64,
    /// Ensemble mean of the tested quantity where it is a single number
    /// (quadratic variation), with its standard error.
    pub estimate: Option<f64>,
    pub estimate_stderr: Option<f64>,
    pub warnings: Vec<String>,
}

impl MartingaleTestReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    fn verdict_from(per_time: &[TimeStatistic], alpha: f64) -> Verdict {
        if per_time.iter().any(|s| s.p_value < alpha) {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityConfig {
    /// Lag as a time span.
    pub h: f64,
    pub alpha: f64,
    /// End of the enlargement horizon; `t + h` must not exceed it.
    pub t_max: f64,
}

/// Names of the 15 basis terms built from four features.
pub fn basis_names(features: &[String]) -> Vec<String> {
    let mut out = vec!["1".to_string()];
    out.extend(features.iter().cloned());
    for i in 0..features.len() {
        for j in i..features.len() {
            out.push(format!("{}*{}", features[i], features[j]));
        }
    }
    out
}

/// Grid index for `t`, allowing `t` to overshoot a truncated grid by less
/// than one step (e.g. `0.4` on a grid that stops at the last node before it).
fn index_up_to(grid: &crate::grid::TimeGrid, t: f64) -> Result<usize> {
    if t > grid.horizon() && t < grid.horizon() + grid.mesh() {
        return Ok(grid.len() - 1);
    }
    grid.index_at_or_before(t)
        .ok_or_else(|| Error::invalid(format!("time {t} outside [0, {}]", grid.horizon())))
}

fn mean_sup(m: &PathEnsemble, t_max: f64) -> Result<f64> {
    let end = index_up_to(m.grid(), t_max)?;
    let sups: Vec<f64> = m
        .paths()
        .iter()
        .map(|p| p.values()[..=end].iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    Ok(pairwise_mean(&sups))
}

/// Regresses `M_{t+h} - M_t` on a fixed basis of the four most recent
/// features of `specs[k]` (time `t_k`): constant, linear terms, and all
/// pairwise products including squares, non-constant columns standardised.
/// Each coefficient is t-tested against 0 and Bonferroni-adjusted across
/// coefficients and times.
pub fn increment_orthogonality_test(
    m: &PathEnsemble,
    obs: &Observation,
    specs: &[SigmaFieldSpec],
    cfg: &OrthogonalityConfig,
) -> Result<MartingaleTestReport> {
    if m.path_count() < 2000 {
        return Err(Error::invalid(format!(
            "orthogonality test needs at least 2000 paths, got {}",
            m.path_count()
        )));
    }
    if m.indices() != obs.ids() {
        return Err(Error::invalid(
            "tested process and features must come from the same draws",
        ));
    }
    if specs.is_empty() {
        return Err(Error::invalid("no test times"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || !(cfg.h > 0.0) {
        return Err(Error::invalid("alpha must lie in (0, 1) and h must be positive"));
    }
    let tol = 1e-9 * m.grid().horizon();
    if let Some(s) = specs.iter().find(|s| s.time + cfg.h > cfg.t_max + tol) {
        return Err(Error::invalid(format!(
            "t + h = {} exceeds the enlargement horizon {}",
            s.time + cfg.h,
            cfg.t_max
        )));
    }
    let mut warnings = Vec::new();
    let mut fits = Vec::with_capacity(specs.len());
    for spec in specs {
        let rows = spec.features(obs)?;
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::invalid(format!("spec '{}' has no features", spec.label)));
        }
        let recent = d.saturating_sub(4);
        let names = basis_names(&spec.names[recent.min(spec.names.len())..]);
        let design_rows: Vec<Vec<f64>> = rows.iter().map(|r| quadratic_terms(&r[recent..])).collect();
        let p = design_rows[0].len();
        let mut cols: Vec<Vec<f64>> = (0..p).map(|j| design_rows.iter().map(|r| r[j]).collect()).collect();
        for col in cols.iter_mut().skip(1) {
            let (mu, _) = mean_stderr(col);
            let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            if sd > 0.0 {
                col.iter_mut().for_each(|v| *v = (*v - mu) / sd);
            }
        }
        let a = m.values_at(spec.time)?;
        let b = m.values_at(spec.time + cfg.h)?;
        let y: Vec<f64> = a.iter().zip(&b).map(|(u, v)| v - u).collect();
        let fit = ols(&cols, &y)?;
        if fit.dropped_columns() {
            let dropped: Vec<&str> = fit
                .kept
                .iter()
                .zip(&names)
                .filter(|(k, _)| !**k)
                .map(|(_, n)| n.as_str())
                .collect();
            warnings.push(format!("t = {}: dropped collinear terms {:?}", spec.time, dropped));
        }
        fits.push((spec.time, names, fit));
    }
    let tests: usize = fits.iter().map(|(_, _, f)| f.rank()).sum();
    let mut per_time = Vec::with_capacity(fits.len());
    let mut coefficients = Vec::new();
    for (t, names, fit) in &fits {
        let mut min_adj = 1.0f64;
        let mut max_t = 0.0f64;
        for (j, name) in names.iter().enumerate() {
            if !fit.kept[j] {
                continue;
            }
            let adj = (fit.p_values[j] * tests as f64).min(1.0);
            min_adj = min_adj.min(adj);
            max_t = max_t.max(fit.t_stats[j].abs());
            coefficients.push(CoefficientRow {
                t: *t,
                term: name.clone(),
                estimate: fit.coefficients[j],
                stderr: fit.stderr[j],
                t_stat: fit.t_stats[j],
                p_value: fit.p_values[j],
                p_adjusted: adj,
            });
        }
        per_time.push(TimeStatistic {
            t: *t,
            statistic: max_t,
            p_value: min_adj,
        });
    }
    let verdict = MartingaleTestReport::verdict_from(&per_time, cfg.alpha);
    Ok(MartingaleTestReport {
        per_time,
        verdict,
        config: TestConfigEcho {
            test: "increment-orthogonality".into(),
            h: Some(cfg.h),
            times: specs.iter().map(|s| s.time).collect(),
            feature_label: specs[0].label.clone(),
            alpha: cfg.alpha,
            tolerance: None,
        },
        coefficients,
        mean_path_sup: mean_sup(m, cfg.t_max)?,
        estimate: None,
        estimate_stderr: None,
        warnings,
    })
}

/// Ensemble-mean realised quadratic variation up to `t` against `t`.
///
/// The p-value tests `|E QV - t| <= tolerance * t`: with
/// `z = (|mean - t| - tolerance * t) / stderr` it is `1 - Phi(z)`, and the
/// verdict fails when it drops below `alpha`.
pub fn qv_test(m: &PathEnsemble, t: f64, tolerance: f64, alpha: f64) -> Result<MartingaleTestReport> {
    if m.grid().mesh() > (1.0f64 / 1024.0) * (1.0 + 1e-9) {
        return Err(Error::invalid(format!(
            "quadratic-variation test needs grid step <= 2^-10, got {}",
            m.grid().mesh()
        )));
    }
    if !(tolerance >= 0.0) || !(t > 0.0) {
        return Err(Error::invalid("tolerance must be >= 0 and t > 0"));
    }
    let end = index_up_to(m.grid(), t)?;
    let qv: Vec<f64> = m
        .paths()
        .iter()
        .map(|p| p.values()[..=end].windows(2).map(|w| (w[1] - w[0]).powi(2)).sum())
        .collect();
    let (mean, se) = mean_stderr(&qv);
    let excess = (mean - t).abs() - tolerance * t;
    let p = if se > 0.0 {
        1.0 - normal_cdf(excess / se)
    } else if excess <= 0.0 {
        1.0
    } else {
        0.0
    };
    let per_time = vec![TimeStatistic {
        t,
        statistic: (mean - t) / t,
        p_value: p.clamp(0.0, 1.0),
    }];
    Ok(MartingaleTestReport {
        verdict: MartingaleTestReport::verdict_from(&per_time, alpha),
        per_time,
        config: TestConfigEcho {
            test: "quadratic-variation".into(),
            h: None,
            times: vec![t],
            feature_label: String::new(),
            alpha,
            tolerance: Some(tolerance),
        },
        coefficients: Vec::new(),
        mean_path_sup: mean_sup(m, t)?,
        estimate: Some(mean),
        estimate_stderr: Some(se),
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasimartingaleEstimate {
    pub estimate: f64,
    /// Path-sampling standard error combined with the regression-noise
    /// scale (the shuffled-target statistic), which bounds the bias of
    /// `E|fitted|` relative to `E|true conditional increment|`.
    pub stderr: f64,
    pub sampling_stderr: f64,
    /// Same statistic with increments shuffled across paths (pure regression
    /// noise), plus three of its standard errors.
    pub noise_floor: f64,
    pub per_interval: Vec<f64>,
}

/// `sum_i E|E^(M_{t_{i+1}} - M_{t_i} | G_{t_i})|`, one spec per left
/// endpoint `t_i` of the subdivision.
pub fn quasimartingale_variation(
    m: &PathEnsemble,
    obs: &Observation,
    subdivision: &Subdivision,
    specs: &[SigmaFieldSpec],
    cfg: &RegressionConfig,
) -> Result<QuasimartingaleEstimate> {
    let n = m.path_count();
    if n < 2000 {
        return Err(Error::invalid(format!(
            "quasimartingale variation needs at least 2000 paths, got {n}"
        )));
    }
    let pts = subdivision.points();
    if specs.len() != pts.len() - 1 {
        return Err(Error::invalid("one spec per subdivision interval is required"));
    }
    if subdivision.horizon() > m.grid().horizon() * (1.0 + 1e-9) {
        return Err(Error::invalid("subdivision beyond the ensemble horizon"));
    }
    if m.indices() != obs.ids() {
        return Err(Error::invalid(
            "tested process and features must come from the same draws",
        ));
    }
    // a fixed derangement-like shuffle for the noise floor
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| splitmix64(m.indices()[j] ^ m.seed().rotate_left(17)));
    let mut per_path = vec![0.0; n];
    let mut per_path_null = vec![0.0; n];
    let mut per_interval = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let a = m.values_at(pts[i])?;
        let b = m.values_at(pts[i + 1])?;
        let y: Vec<f64> = a.iter().zip(&b).map(|(u, v)| v - u).collect();
        let features = spec.features(obs)?;
        let fit = cross_fit(&features, obs.ids(), &y, cfg)?;
        let shuffled: Vec<f64> = order.iter().map(|&j| y[j]).collect();
        let null = cross_fit(&features, obs.ids(), &shuffled, cfg)?;
        let abs: Vec<f64> = fit.fitted.iter().map(|v| v.abs()).collect();
        per_interval.push(pairwise_mean(&abs));
        for j in 0..n {
            per_path[j] += abs[j];
            per_path_null[j] += null.fitted[j].abs();
        }
    }
    let (estimate, stderr) = mean_stderr(&per_path);
    let (null_mean, null_se) = mean_stderr(&per_path_null);
    Ok(QuasimartingaleEstimate {
        estimate,
        stderr: (stderr * stderr + null_mean * null_mean).sqrt(),
        sampling_stderr: stderr,
        noise_floor: null_mean + 3.0 * null_se,
        per_interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::ScoreFunction;
    use crate::expand::compensator_limit;
    use crate::grid::{make_dyadic_subdivision, make_uniform_grid, TimeGrid};
    use crate::path::Path;
    use crate::regress::Basis;
    use crate::rng::RngContract;
    use crate::simulate::{brownian_ensemble, reverse_path};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn grid(steps: usize) -> Arc<TimeGrid> {
        Arc::new(make_uniform_grid(1.0, steps).unwrap())
    }

    fn own_past(t: f64, h: f64) -> SigmaFieldSpec {
        SigmaFieldSpec::new(
            "own-increments",
            t,
            vec!["dB3".into(), "dB2".into(), "dB1".into(), "B".into()],
            move |b, _| {
                let v = |u: f64| b.value_at(u);
                Ok(vec![
                    v(t - 2.0 * h)? - v(t - 3.0 * h)?,
                    v(t - h)? - v(t - 2.0 * h)?,
                    v(t)? - v(t - h)?,
                    v(t)?,
                ])
            },
        )
    }

    fn reversal_spec(t: f64, h: f64) -> SigmaFieldSpec {
        SigmaFieldSpec::new(
            "b-and-reversal",
            t,
            vec!["dB".into(), "dZ".into(), "B".into(), "Z-B".into()],
            move |b, z| {
                let z = z.expect("reversal path");
                Ok(vec![
                    b.value_at(t)? - b.value_at(t - h)?,
                    z.value_at(t)? - z.value_at(t - h)?,
                    b.value_at(t)?,
                    z.value_at(t)? - b.value_at(t)?,
                ])
            },
        )
    }

    #[test]
    fn basis_names_layout() {
        let n = basis_names(&["a".into(), "b".into()]);
        assert_eq!(n, vec!["1", "a", "b", "a*a", "a*b", "b*b"]);
    }

    #[test]
    fn brownian_motion_passes_with_its_own_past() {
        let h = 16.0 / 256.0;
        let ens = brownian_ensemble(&grid(256), RngContract::new(42), 2000).unwrap();
        let specs: Vec<_> = [0.25, 0.5, 0.75].iter().map(|&t| own_past(t, h)).collect();
        let cfg = OrthogonalityConfig {
            h,
            alpha: 0.01,
            t_max: 1.0,
        };
        let r = increment_orthogonality_test(&ens, &Observation::base(&ens), &specs, &cfg).unwrap();
        assert!(r.passed(), "{:?}", r.per_time);
        assert_eq!(r.coefficients.len(), 45);
        assert!(r.per_time.iter().all(|s| (0.0..=1.0).contains(&s.p_value)));
    }

    #[test]
    fn reversal_drift_is_detected_and_removed() {
        let g = grid(1024);
        let h = 16.0 / 1024.0;
        let ens = brownian_ensemble(&g, RngContract::new(42), 4000).unwrap();
        let rev = ens.map(|_, p| reverse_path(p, 1.0)).unwrap();
        let obs = Observation::with_expansion(&ens, &rev).unwrap();
        let specs: Vec<_> = [0.05, 0.15, 0.25, 0.35].iter().map(|&t| reversal_spec(t, h)).collect();
        let cfg = OrthogonalityConfig {
            h,
            alpha: 0.01,
            t_max: 0.4,
        };
        let raw = increment_orthogonality_test(&ens, &obs, &specs, &cfg).unwrap();
        assert!(!raw.passed());
        let gap = raw
            .coefficients
            .iter()
            .find(|c| c.term == "Z-B" && c.t == 0.05)
            .unwrap();
        assert!(gap.estimate > 0.0);
        let score = ScoreFunction::gaussian();
        let mart = ens
            .map(|_, p| {
                let a = compensator_limit(p, &score, 0.4)?;
                p.truncated(0.4)?.minus(&a.trajectory)
            })
            .unwrap();
        let rev_t = rev.map(|_, p| p.truncated(0.4)).unwrap();
        let ens_t = ens.map(|_, p| p.truncated(0.4)).unwrap();
        let obs_t = Observation::with_expansion(&ens_t, &rev_t).unwrap();
        let r = increment_orthogonality_test(&mart, &obs_t, &specs, &cfg).unwrap();
        assert!(r.passed(), "{:?}", r.per_time);
    }

    #[test]
    fn orthogonality_guards() {
        let ens = brownian_ensemble(&grid(64), RngContract::new(1), 1999).unwrap();
        let cfg = OrthogonalityConfig {
            h: 0.1,
            alpha: 0.05,
            t_max: 1.0,
        };
        assert!(increment_orthogonality_test(&ens, &Observation::base(&ens), &[own_past(0.5, 0.1)], &cfg).is_err());
        let ens = brownian_ensemble(&grid(64), RngContract::new(1), 2000).unwrap();
        let cfg = OrthogonalityConfig {
            h: 0.1,
            alpha: 0.05,
            t_max: 0.5,
        };
        assert!(increment_orthogonality_test(&ens, &Observation::base(&ens), &[own_past(0.5, 0.1)], &cfg).is_err());
    }

    #[test]
    fn collinear_features_are_dropped_with_a_warning() {
        let ens = brownian_ensemble(&grid(64), RngContract::new(2), 2000).unwrap();
        let spec = SigmaFieldSpec::new("dup", 0.5, vec!["B".into(), "B2".into()], |b, _| {
            let v = b.value_at(0.5)?;
            Ok(vec![v, 2.0 * v])
        });
        let cfg = OrthogonalityConfig {
            h: 0.125,
            alpha: 0.01,
            t_max: 1.0,
        };
        let r = increment_orthogonality_test(&ens, &Observation::base(&ens), &[spec], &cfg).unwrap();
        assert!(!r.warnings.is_empty());
        assert!(r.passed());
    }

    #[test]
    fn quadratic_variation_checks() {
        let g = grid(1024);
        let ens = brownian_ensemble(&g, RngContract::new(3), 1000).unwrap();
        let r = qv_test(&ens, 0.4, 0.02, 0.01).unwrap();
        assert!(r.passed());
        assert!((r.estimate.unwrap() - 0.4).abs() < 0.02 * 0.4);
        let smooth = ens
            .map(|_, p| compensator_limit(p, &ScoreFunction::gaussian(), 0.4).map(|r| r.trajectory))
            .unwrap();
        let r = qv_test(&smooth, 0.4, 0.02, 0.01).unwrap();
        assert!(r.estimate.unwrap() <= 0.02 * 0.4);
        assert!(!r.passed());
        let coarse = brownian_ensemble(&grid(512), RngContract::new(3), 10).unwrap();
        assert!(qv_test(&coarse, 0.4, 0.02, 0.01).is_err());
    }

    #[test]
    fn deterministic_drift_has_quasimartingale_variation_t_max() {
        let g = grid(256);
        let ens = brownian_ensemble(&g, RngContract::new(4), 2000).unwrap();
        let m = ens.map(|_, p| Path::from_fn(p.shared_grid().clone(), |t| t)).unwrap();
        let sub = make_dyadic_subdivision(3, 0.4).unwrap();
        let specs: Vec<_> = sub.points()[..8]
            .iter()
            .map(|&t| SigmaFieldSpec::from_times("b", t, vec![t], vec![]).unwrap())
            .collect();
        let obs = Observation::base(&ens);
        let q =
            quasimartingale_variation(&m, &obs, &sub, &specs, &RegressionConfig::least_squares(Basis::Affine)).unwrap();
        let snapped: f64 = g.times()[g.index_at_or_before(0.4).unwrap()];
        assert!((q.estimate - snapped).abs() < 1e-10, "{}", q.estimate);
        // a martingale sits at the noise floor
        let q = quasimartingale_variation(
            &ens,
            &obs,
            &sub,
            &specs,
            &RegressionConfig::least_squares(Basis::Affine),
        )
        .unwrap();
        assert!(q.estimate <= q.noise_floor, "{q:?}");
    }

    #[test]
    fn quasimartingale_recovers_the_reversal_drift_mass() {
        let g = grid(1024);
        let ens = brownian_ensemble(&g, RngContract::new(42), 4000).unwrap();
        let rev = ens.map(|_, p| reverse_path(p, 1.0)).unwrap();
        let obs = Observation::with_expansion(&ens, &rev).unwrap();
        let sub = make_dyadic_subdivision(5, 0.4).unwrap();
        let specs: Vec<_> = sub.points()[..32]
            .iter()
            .map(|&t| SigmaFieldSpec::from_times("bz", t, vec![t], vec![t]).unwrap())
            .collect();
        let q = quasimartingale_variation(
            &ens,
            &obs,
            &sub,
            &specs,
            &RegressionConfig::least_squares(Basis::Affine),
        )
        .unwrap();
        let oracle = (2.0 / std::f64::consts::PI).sqrt() * (1.0 - 0.2f64.sqrt());
        assert!(
            (q.estimate - oracle).abs() < 0.15 * oracle,
            "{} vs {oracle}",
            q.estimate
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn qv_is_sign_invariant(seed in 0u64..1000) {
            let ens = brownian_ensemble(&grid(1024), RngContract::new(seed), 20).unwrap();
            let neg = ens.map(|_, p| p.map_values(|_, v| -v)).unwrap();
            let a = qv_test(&ens, 0.4, 0.02, 0.05).unwrap();
            let b = qv_test(&neg, 0.4, 0.02, 0.05).unwrap();
            prop_assert_eq!(a.estimate, b.estimate);
            prop_assert_eq!(a.per_time, b.per_time);
        }

        #[test]
        fn drift_detection_is_additive(c in 0.5f64..3.0) {
            let g = grid(128);
            let ens = brownian_ensemble(&g, RngContract::new(77), 2000).unwrap();
            let shifted = ens.map(|_, p| p.map_values(|t, v| v + c * t)).unwrap();
            let sub = make_dyadic_subdivision(2, 0.5).unwrap();
            let specs: Vec<_> = sub.points()[..4]
                .iter()
                .map(|&t| SigmaFieldSpec::from_times("b", t, vec![t], vec![]).unwrap())
                .collect();
            let obs = Observation::base(&ens);
            let cfg = RegressionConfig::least_squares(Basis::Affine);
            let q0 = quasimartingale_variation(&ens, &obs, &sub, &specs, &cfg).unwrap();
            let q1 = quasimartingale_variation(&shifted, &obs, &sub, &specs, &cfg).unwrap();
            let se = (q0.stderr.powi(2) + q1.stderr.powi(2)).sqrt();
            prop_assert!(((q1.estimate - q0.estimate) - c * 0.5).abs() < 3.0 * se, "{} vs {}", q1.estimate - q0.estimate, c * 0.5);
        }
    }
}
