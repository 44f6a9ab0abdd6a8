//! Finite-sample diagnostics for convergence of sigma-fields: regression
//! estimates of `E(Z | A^n)`, the exceedance distance `d_n`, stopping-time
//! approximation from discretized information, and truncation of marked
//! point processes.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::par;
use crate::path::{Path, PathEnsemble};
use crate::regress::{cross_fit, pairwise_mean, RegressionConfig};
use crate::rng::RngContract;
use crate::stats::mean_stderr;

pub use crate::regress::RegressionEstimate;

/// The information available at one time: the base path and, optionally, the
/// enlarging path of the same Monte Carlo draw.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub base: &'a PathEnsemble,
    pub expansion: Option<&'a PathEnsemble>,
}

impl<'a> Observation<'a> {
    pub fn base(base: &'a PathEnsemble) -> Self {
        Self { base, expansion: None }
    }

    pub fn with_expansion(base: &'a PathEnsemble, expansion: &'a PathEnsemble) -> Result<Self> {
        if base.path_count() != expansion.path_count() || base.indices() != expansion.indices() {
            return Err(Error::invalid("base and expansion ensembles must hold the same draws"));
        }
        Ok(Self {
            base,
            expansion: Some(expansion),
        })
    }

    pub fn path_count(&self) -> usize {
        self.base.path_count()
    }

    pub fn ids(&self) -> &[u64] {
        self.base.indices()
    }
}

pub type Extractor = Arc<dyn Fn(&Path, Option<&Path>) -> Result<Vec<f64>> + Send + Sync>;

/// A finite-dimensional surrogate for a sigma-field at time `time`: a
/// feature map reading the base and enlarging paths at times `<= time`.
#[derive(Clone)]
pub struct SigmaFieldSpec {
    pub label: String,
    pub time: f64,
    pub names: Vec<String>,
    extractor: Extractor,
}

impl fmt::Debug for SigmaFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigmaFieldSpec")
            .field("label", &self.label)
            .field("time", &self.time)
            .field("names", &self.names)
            .finish()
    }
}

impl SigmaFieldSpec {
    pub fn new(
        label: impl Into<String>,
        time: f64,
        names: Vec<String>,
        extractor: impl Fn(&Path, Option<&Path>) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            time,
            names,
            extractor: Arc::new(extractor),
        }
    }

    /// Values of the base path at `base_times` followed by the enlarging path
    /// at `expansion_times`; every time must be `<= time`.
    pub fn from_times(
        label: impl Into<String>,
        time: f64,
        base_times: Vec<f64>,
        expansion_times: Vec<f64>,
    ) -> Result<Self> {
        if let Some(u) = base_times.iter().chain(&expansion_times).find(|&&u| !(u <= time)) {
            return Err(Error::invalid(format!(
                "feature time {u} lies after the spec time {time}"
            )));
        }
        let names = base_times
            .iter()
            .map(|u| format!("X({u})"))
            .chain(expansion_times.iter().map(|u| format!("Z({u})")))
            .collect();
        Ok(Self::new(label, time, names, move |base, exp| {
            let mut out = Vec::with_capacity(base_times.len() + expansion_times.len());
            for &u in &base_times {
                out.push(base.value_at(u)?);
            }
            if !expansion_times.is_empty() {
                let z = exp.ok_or_else(|| Error::invalid("spec needs an expansion path"))?;
                for &u in &expansion_times {
                    out.push(z.value_at(u)?);
                }
            }
            Ok(out)
        }))
    }

    pub fn extract(&self, base: &Path, expansion: Option<&Path>) -> Result<Vec<f64>> {
        (self.extractor)(base, expansion)
    }

    /// Feature rows for every path, checked for constant length and finite
    /// values.
    pub fn features(&self, obs: &Observation) -> Result<Vec<Vec<f64>>> {
        let rows = par::try_map_range(obs.path_count(), |j| {
            self.extract(obs.base.path(j), obs.expansion.map(|e| e.path(j)))
        })?;
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!(
                "spec '{}' yields feature vectors of varying length",
                self.label
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "features",
                format!("non-finite feature in spec '{}'", self.label),
            ));
        }
        Ok(rows)
    }

    /// Randomises every path strictly after `time` and reports whether all
    /// feature vectors are unchanged.
    pub fn check_no_lookahead(&self, obs: &Observation, rng: &mut dyn RngCore) -> Result<bool> {
        let before = self.features(obs)?;
        let scramble = |e: &PathEnsemble, rng: &mut dyn RngCore| -> Result<PathEnsemble> {
            let times = e.grid().times().to_vec();
            let noise: Vec<Vec<f64>> = (0..e.path_count())
                .map(|_| {
                    times
                        .iter()
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * 10.0)
                        .collect()
                })
                .collect();
            e.map(|j, p| {
                let v = p
                    .values()
                    .iter()
                    .zip(&times)
                    .zip(&noise[j])
                    .map(|((&v, &t), &z)| if t > self.time { v + z } else { v })
                    .collect();
                Path::new(p.shared_grid().clone(), v)
            })
        };
        let base = scramble(obs.base, rng)?;
        let exp = obs.expansion.map(|e| scramble(e, rng)).transpose()?;
        let after = self.features(&Observation {
            base: &base,
            expansion: exp.as_ref(),
        })?;
        Ok(before == after)
    }
}

/// Cross-fitted regression of per-path `targets` on the spec's features.
pub fn estimate_conditional_expectation(
    targets: &[f64],
    spec: &SigmaFieldSpec,
    obs: &Observation,
    cfg: &RegressionConfig,
) -> Result<RegressionEstimate> {
    if obs.path_count() < 500 {
        return Err(Error::invalid(format!(
            "conditional expectations need at least 500 paths, got {}",
            obs.path_count()
        )));
    }
    if targets.len() != obs.path_count() {
        return Err(Error::invalid("one target per path is required"));
    }
    if !pairwise_mean(targets).is_finite() || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "targets",
            "targets are not integrable (non-finite values)",
        ));
    }
    cross_fit(&spec.features(obs)?, obs.ids(), targets, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakConvergenceRow {
    pub level: u32,
    /// Fraction of paths with `|fitted - target| > eta`.
    pub d_n: f64,
    pub cross_fitted_l1: f64,
}

/// `d_n` for each `(level, spec)`; the specs must share one time.
pub fn weak_convergence_report(
    targets: &[f64],
    specs: &[(u32, SigmaFieldSpec)],
    obs: &Observation,
    eta: f64,
    cfg: &RegressionConfig,
) -> Result<Vec<WeakConvergenceRow>> {
    if specs.len() < 2 {
        return Err(Error::invalid("a weak-convergence report needs at least two levels"));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("threshold eta = {eta} must be positive")));
    }
    let t = specs[0].1.time;
    if specs.iter().any(|(_, s)| (s.time - t).abs() > 1e-12) {
        return Err(Error::invalid("all levels must describe the same time"));
    }
    specs
        .iter()
        .map(|(level, spec)| {
            let est = estimate_conditional_expectation(targets, spec, obs, cfg)?;
            let exceed = est
                .fitted
                .iter()
                .zip(targets)
                .filter(|(f, y)| (*f - *y).abs() > eta)
                .count();
            Ok(WeakConvergenceRow {
                level: *level,
                d_n: exceed as f64 / targets.len() as f64,
                cross_fitted_l1: est.cross_fitted_l1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeApprox {
    /// `tau_m` per path.
    pub tau_m: Vec<f64>,
    /// `probabilities[i][j]`: estimated `P(tau = t_i | G_{t_i})` on path `j`.
    pub probabilities: Vec<Vec<f64>>,
}

/// `tau_m = min { t_i : P^(tau = t_i | G^m_{t_i}) > 1/2 }`, or `t_M` when no
/// time qualifies. `specs[i]` describes the information at `times[i]`.
pub fn approximate_stopping_time(
    tau: &[f64],
    times: &[f64],
    specs: &[SigmaFieldSpec],
    obs: &Observation,
    cfg: &RegressionConfig,
) -> Result<StoppingTimeApprox> {
    if times.is_empty() || times.len() != specs.len() {
        return Err(Error::invalid("one spec per stopping-time value is required"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("stopping-time values must be strictly increasing"));
    }
    if tau.len() != obs.path_count() {
        return Err(Error::invalid("one tau per path is required"));
    }
    let tol = 1e-9 * times[times.len() - 1].abs().max(1.0);
    let slot: Vec<usize> = tau
        .iter()
        .map(|&v| {
            times
                .iter()
                .position(|&t| (t - v).abs() <= tol)
                .ok_or_else(|| Error::invalid(format!("tau value {v} is not one of the grid times")))
        })
        .collect::<Result<_>>()?;
    let mut probabilities = Vec::with_capacity(times.len());
    for (i, spec) in specs.iter().enumerate() {
        let ind: Vec<f64> = slot.iter().map(|&s| if s == i { 1.0 } else { 0.0 }).collect();
        let p = if ind.iter().all(|&v| v == ind[0]) {
            // degenerate indicator: its own conditional expectation
            ind
        } else {
            estimate_conditional_expectation(&ind, spec, obs, cfg)?.fitted
        };
        probabilities.push(p);
    }
    let last = times[times.len() - 1];
    let tau_m = (0..tau.len())
        .map(|j| {
            (0..times.len())
                .find(|&i| probabilities[i][j] > 0.5)
                .map_or(last, |i| times[i])
        })
        .collect();
    Ok(StoppingTimeApprox { tau_m, probabilities })
}

pub type IndexSampler = Arc<dyn Fn(usize, &mut dyn RngCore) -> f64 + Send + Sync>;

/// Marked point process `N_t = sum_i X_i 1{tau_i <= t}` with jumps indexed
/// `i = 1..=index_cap`; indices beyond the cap are ignored.
#[derive(Clone)]
pub struct PointProcessSpec {
    pub label: String,
    jump_time: IndexSampler,
    mark: IndexSampler,
    /// Declared `E|X_i|` bound.
    pub mark_mean: f64,
    pub truncation: usize,
    pub horizon: f64,
    pub index_cap: usize,
}

impl fmt::Debug for PointProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PointProcessSpec")
            .field("label", &self.label)
            .field("mark_mean", &self.mark_mean)
            .field("truncation", &self.truncation)
            .field("horizon", &self.horizon)
            .field("index_cap", &self.index_cap)
            .finish()
    }
}

impl PointProcessSpec {
    pub fn new(
        label: impl Into<String>,
        jump_time: impl Fn(usize, &mut dyn RngCore) -> f64 + Send + Sync + 'static,
        mark: impl Fn(usize, &mut dyn RngCore) -> f64 + Send + Sync + 'static,
        mark_mean: f64,
        truncation: usize,
        horizon: f64,
        index_cap: usize,
    ) -> Result<Self> {
        if !(mark_mean >= 0.0 && mark_mean.is_finite()) {
            return Err(Error::invalid(format!(
                "declared mark mean {mark_mean} must be finite and >= 0"
            )));
        }
        if !(horizon > 0.0) || index_cap == 0 {
            return Err(Error::invalid("horizon and index cap must be positive"));
        }
        Ok(Self {
            label: label.into(),
            jump_time: Arc::new(jump_time),
            mark: Arc::new(mark),
            mark_mean,
            truncation,
            horizon,
            index_cap,
        })
    }

    /// `tau_i ~ Exp(rate 1 / i^2)`, `X_i ~ Exp(1)`, `T = 1`, indices up to
    /// 2000 (the ignored tail has `sum_{i > 2000} P(tau_i <= 1) < 5e-4`).
    pub fn preset(truncation: usize) -> Self {
        Self::new(
            "exp-times-exp-marks",
            |i, rng| {
                let e: f64 = rng.sample(rand_distr::Exp1);
                e * (i * i) as f64
            },
            |_, rng| rng.sample(rand_distr::Exp1),
            1.0,
            truncation,
            1.0,
            2000,
        )
        .expect("valid preset")
    }

    pub fn with_truncation(&self, truncation: usize) -> Self {
        Self {
            truncation,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointProcessSample {
    pub full: PathEnsemble,
    pub truncated: PathEnsemble,
    /// Exact `sup_{t <= T} |N_t - N^n_t|` per path.
    pub sup_distance: Vec<f64>,
    /// Number of paths on which `tau_i <= T`, for `i = 1..=index_cap`.
    pub hits: Vec<usize>,
    pub truncation: usize,
    pub mark_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundRow {
    pub truncation: usize,
    pub eta: f64,
    pub empirical: f64,
    pub stderr: f64,
    /// `(mu / eta) sum_{i > n} P^(tau_i <= T)`.
    pub bound: f64,
    /// `E sup |N - N^n| / eta`, the Markov bound from the sample itself.
    pub markov: f64,
    pub markov_stderr: f64,
}

impl PointProcessSample {
    pub fn tail_bound(&self, eta: f64) -> Result<TailBoundRow> {
        if !(eta > 0.0) {
            return Err(Error::invalid(format!("eta = {eta} must be positive")));
        }
        let n = self.sup_distance.len() as f64;
        let exceed: Vec<f64> = self
            .sup_distance
            .iter()
            .map(|&d| if d >= eta { 1.0 } else { 0.0 })
            .collect();
        let (empirical, stderr) = mean_stderr(&exceed);
        let tail: f64 = self.hits.iter().skip(self.truncation).map(|&h| h as f64 / n).sum();
        let (m, mse) = mean_stderr(&self.sup_distance);
        Ok(TailBoundRow {
            truncation: self.truncation,
            eta,
            empirical,
            stderr,
            bound: self.mark_mean / eta * tail,
            markov: m / eta,
            markov_stderr: mse / eta,
        })
    }
}

/// Simulates `count` paths of the full and truncated processes on `grid`.
/// Path `j` draws `(tau_1, X_1, tau_2, X_2, ...)` from stream `j`.
pub fn truncate_point_process(
    spec: &PointProcessSpec,
    grid: &Arc<TimeGrid>,
    rng: &RngContract,
    count: usize,
) -> Result<PointProcessSample> {
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::invalid("grid horizon differs from the point-process horizon"));
    }
    if count == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    struct Draw {
        jumps: Vec<(usize, f64, f64)>,
        abs_mark_sum: f64,
    }
    let draws = par::try_map_range(count, |j| {
        let mut r = rng.stream(j as u64);
        let mut jumps = Vec::new();
        let mut abs_mark_sum = 0.0;
        for i in 1..=spec.index_cap {
            let tau = (spec.jump_time)(i, &mut r);
            let x = (spec.mark)(i, &mut r);
            if !(tau > 0.0) || tau.is_nan() {
                return Err(Error::invalid(format!("jump time {tau} for index {i} is not positive")));
            }
            if !x.is_finite() {
                return Err(Error::numerical(
                    "point process",
                    format!("non-finite mark at index {i}"),
                ));
            }
            abs_mark_sum += x.abs();
            if tau <= spec.horizon {
                jumps.push((i, tau, x));
            }
        }
        Ok(Draw { jumps, abs_mark_sum })
    })?;
    let total: f64 = draws.iter().map(|d| d.abs_mark_sum).sum();
    let running_mean = total / (count * spec.index_cap) as f64;
    if running_mean > 10.0 * spec.mark_mean.max(1e-12) + 1.0 {
        return Err(Error::numerical(
            "point process",
            format!(
                "mean |mark| {running_mean} far exceeds the declared {}; marks look non-integrable",
                spec.mark_mean
            ),
        ));
    }
    let mut hits = vec![0usize; spec.index_cap];
    for d in &draws {
        for &(i, _, _) in &d.jumps {
            hits[i - 1] += 1;
        }
    }
    let times = grid.times();
    let build = |d: &Draw, upto: usize| -> Result<Path> {
        let mut v = vec![0.0; times.len()];
        for &(i, tau, x) in &d.jumps {
            if i <= upto {
                let k = times.partition_point(|&t| t < tau);
                v[k..].iter_mut().for_each(|e| *e += x);
            }
        }
        Path::new(grid.clone(), v)
    };
    let full = par::try_map_range(count, |j| build(&draws[j], usize::MAX))?;
    let trunc = par::try_map_range(count, |j| build(&draws[j], spec.truncation))?;
    let sup_distance = draws
        .iter()
        .map(|d| {
            let mut tail: Vec<(f64, f64)> = d
                .jumps
                .iter()
                .filter(|j| j.0 > spec.truncation)
                .map(|j| (j.1, j.2))
                .collect();
            tail.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            let mut sup = 0.0f64;
            for (_, x) in tail {
                acc += x;
                sup = sup.max(acc.abs());
            }
            sup
        })
        .collect();
    let ids: Vec<u64> = (0..count as u64).collect();
    Ok(PointProcessSample {
        full: PathEnsemble::from_parts(grid.clone(), full, ids.clone(), rng.master_seed())?,
        truncated: PathEnsemble::from_parts(grid.clone(), trunc, ids, rng.master_seed())?,
        sup_distance,
        hits,
        truncation: spec.truncation,
        mark_mean: spec.mark_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_dyadic_subdivision, make_uniform_grid};
    use crate::regress::Basis;
    use crate::simulate::brownian_ensemble;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(steps: usize) -> Arc<TimeGrid> {
        Arc::new(make_uniform_grid(1.0, steps).unwrap())
    }

    #[test]
    fn from_times_rejects_lookahead_and_reads_values() {
        assert!(SigmaFieldSpec::from_times("bad", 0.5, vec![0.6], vec![]).is_err());
        let ens = brownian_ensemble(&grid(16), RngContract::new(1), 3).unwrap();
        let spec = SigmaFieldSpec::from_times("ok", 0.5, vec![0.25, 0.5], vec![]).unwrap();
        let rows = spec.features(&Observation::base(&ens)).unwrap();
        assert_eq!(
            rows[1],
            vec![ens.path(1).value_at(0.25).unwrap(), ens.path(1).value_at(0.5).unwrap()]
        );
        assert_eq!(spec.names, vec!["X(0.25)", "X(0.5)"]);
    }

    #[test]
    fn perturbing_the_future_changes_no_feature() {
        let ens = brownian_ensemble(&grid(64), RngContract::new(2), 20).unwrap();
        let rev = ens.map(|_, p| crate::simulate::reverse_path(p, 1.0)).unwrap();
        let obs = Observation::with_expansion(&ens, &rev).unwrap();
        let spec = SigmaFieldSpec::from_times("b+z", 0.3, vec![0.1, 0.3], vec![0.2, 0.3]).unwrap();
        assert!(spec
            .check_no_lookahead(&obs, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap());
        let cheat = SigmaFieldSpec::new("cheat", 0.3, vec!["X(1)".into()], |b, _| Ok(vec![b.last()]));
        assert!(!cheat
            .check_no_lookahead(&obs, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap());
    }

    #[test]
    fn conditional_expectation_examples() {
        let ens = brownian_ensemble(&grid(64), RngContract::new(3), 4000).unwrap();
        let obs = Observation::base(&ens);
        let spec = SigmaFieldSpec::from_times("half", 0.5, vec![0.5], vec![]).unwrap();
        let b1 = ens.values_at(1.0).unwrap();
        let est = estimate_conditional_expectation(&b1, &spec, &obs, &RegressionConfig::default()).unwrap();
        // E|B_1 - B_{1/2}| = sqrt(2/pi) sqrt(1/2)
        let oracle = (2.0 / std::f64::consts::PI).sqrt() * 0.5f64.sqrt();
        assert!(
            (est.cross_fitted_l1 - oracle).abs() < 0.15 * oracle,
            "{}",
            est.cross_fitted_l1
        );

        // independent noise: fitted values hover at the sample mean
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f64> = (0..4000).map(|_| r.sample(StandardNormal)).collect();
        let est = estimate_conditional_expectation(&noise, &spec, &obs, &RegressionConfig::default()).unwrap();
        let (m, se) = mean_stderr(&noise);
        let (fm, _) = mean_stderr(&est.fitted);
        assert!((fm - m).abs() < 3.0 * se);
        assert!((est.cross_fitted_l1 - 0.797_884_56).abs() < 0.05);

        // affine target with least squares
        let b25 = ens.values_at(0.25).unwrap();
        let b5 = ens.values_at(0.5).unwrap();
        let y: Vec<f64> = b25.iter().zip(&b5).map(|(a, b)| 1.0 + 2.0 * a - b).collect();
        let s2 = SigmaFieldSpec::from_times("two", 0.5, vec![0.25, 0.5], vec![]).unwrap();
        let est =
            estimate_conditional_expectation(&y, &s2, &obs, &RegressionConfig::least_squares(Basis::Affine)).unwrap();
        assert!(est.fitted.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));

        let small = brownian_ensemble(&grid(8), RngContract::new(3), 499).unwrap();
        let bad = estimate_conditional_expectation(
            &vec![0.0; 499],
            &spec,
            &Observation::base(&small),
            &RegressionConfig::default(),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn tower_property_under_cross_fitting() {
        let ens = brownian_ensemble(&grid(64), RngContract::new(4), 3000).unwrap();
        let obs = Observation::base(&ens);
        let spec = SigmaFieldSpec::from_times("q", 0.5, vec![0.25, 0.5], vec![]).unwrap();
        let y: Vec<f64> = ens
            .values_at(0.75)
            .unwrap()
            .iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        let est = estimate_conditional_expectation(&y, &spec, &obs, &RegressionConfig::default()).unwrap();
        let (m, se) = mean_stderr(&y);
        assert!((mean_stderr(&est.fitted).0 - m).abs() < 3.0 * se);
    }

    fn dyadic_spec(level: u32, t: f64) -> SigmaFieldSpec {
        let pts: Vec<f64> = make_dyadic_subdivision(level, 1.0)
            .unwrap()
            .points()
            .iter()
            .copied()
            .filter(|&u| u <= t)
            .collect();
        SigmaFieldSpec::from_times(format!("dyadic-{level}"), t, pts, vec![]).unwrap()
    }

    #[test]
    fn measurable_target_has_small_distance() {
        let ens = brownian_ensemble(&grid(64), RngContract::new(5), 2000).unwrap();
        let obs = Observation::base(&ens);
        let y: Vec<f64> = ens
            .values_at(0.25)
            .unwrap()
            .iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        let specs = vec![(1, dyadic_spec(1, 0.5)), (2, dyadic_spec(2, 0.5))];
        let rows = weak_convergence_report(&y, &specs, &obs, 0.1, &RegressionConfig::knn(None)).unwrap();
        assert!(rows[1].d_n <= 0.05, "{rows:?}");
        assert!(rows[0].d_n > rows[1].d_n);
        assert!(weak_convergence_report(&y, &specs[..1], &obs, 0.1, &RegressionConfig::default()).is_err());
    }

    #[test]
    fn fixed_jump_time_on_every_subdivision_gives_decreasing_distance() {
        // X = B + 1{t >= 1/2}: the jump time is a dyadic point of every level
        let g = grid(64);
        let ens = brownian_ensemble(&g, RngContract::new(6), 2000)
            .unwrap()
            .map(|_, p| p.map_values(|t, v| v + if t >= 0.5 { 1.0 } else { 0.0 }))
            .unwrap();
        let obs = Observation::base(&ens);
        let target: Vec<f64> = ens
            .values_at(0.375)
            .unwrap()
            .iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        let specs: Vec<_> = (1..=3).map(|l| (l, dyadic_spec(l, 0.5))).collect();
        let rows = weak_convergence_report(
            &target,
            &specs,
            &obs,
            0.1,
            &RegressionConfig::least_squares(Basis::Affine),
        )
        .unwrap();
        assert!(rows.windows(2).all(|w| w[1].d_n < w[0].d_n), "{rows:?}");
    }

    #[test]
    fn stopping_time_trivial_cases() {
        let ens = brownian_ensemble(&grid(16), RngContract::new(7), 600).unwrap();
        let obs = Observation::base(&ens);
        let times: Vec<f64> = (1..=4).map(|k| k as f64 * 0.25).collect();
        let specs: Vec<_> = times
            .iter()
            .map(|&t| SigmaFieldSpec::from_times("s", t, vec![t], vec![]).unwrap())
            .collect();
        let tau = vec![0.5; 600];
        let r = approximate_stopping_time(&tau, &times, &specs, &obs, &RegressionConfig::default()).unwrap();
        assert!(r.tau_m.iter().all(|&v| v == 0.5));
        // tau measurable w.r.t. the features: first quarter-time where B > 0
        let tau: Vec<f64> = ens
            .paths()
            .iter()
            .map(|p| *times.iter().find(|&&t| p.value_at(t).unwrap() > 0.0).unwrap_or(&1.0))
            .collect();
        let ind_specs: Vec<_> = times
            .iter()
            .map(|&t| {
                let ts = times.clone();
                SigmaFieldSpec::new("ind", t, vec!["first".into()], move |b, _| {
                    let first = ts
                        .iter()
                        .take_while(|&&u| u <= t)
                        .position(|&u| b.value_at(u).unwrap() > 0.0);
                    let here = ts.iter().position(|&u| u == t).unwrap();
                    Ok(vec![if first == Some(here) { 1.0 } else { 0.0 }])
                })
            })
            .collect();
        let r = approximate_stopping_time(
            &tau,
            &times,
            &ind_specs,
            &obs,
            &RegressionConfig::least_squares(Basis::Affine),
        )
        .unwrap();
        assert_eq!(r.tau_m, tau);
        assert!(
            approximate_stopping_time(&vec![0.3; 600], &times, &specs, &obs, &RegressionConfig::default()).is_err()
        );
    }

    #[test]
    fn deterministic_point_process() {
        let g = Arc::new(make_uniform_grid(0.35, 35).unwrap());
        let spec = PointProcessSpec::new("det", |i, _| i as f64 / 10.0, |_, _| 1.0, 1.0, 2, 0.35, 50).unwrap();
        let s = truncate_point_process(&spec, &g, &RngContract::new(0), 3).unwrap();
        assert_eq!(s.sup_distance, vec![1.0; 3]);
        assert_eq!(s.full.path(0).last(), 3.0);
        assert_eq!(s.truncated.path(0).last(), 2.0);
        assert_eq!(s.full.path(0).value_at(0.25).unwrap(), 2.0);
        let s = truncate_point_process(&spec.with_truncation(3), &g, &RngContract::new(0), 3).unwrap();
        assert_eq!(s.sup_distance, vec![0.0; 3]);
    }

    #[test]
    fn heavy_marks_are_rejected() {
        let g = grid(10);
        let spec = PointProcessSpec::new(
            "cauchy",
            |_, _| 0.5,
            |_, rng| {
                let u: f64 = rng.random();
                (std::f64::consts::PI * (u - 0.5)).tan()
            },
            1.0,
            1,
            1.0,
            5000,
        )
        .unwrap();
        assert!(matches!(
            truncate_point_process(&spec, &g, &RngContract::new(1), 20),
            Err(Error::NumericalFailure { .. })
        ));
    }

    #[test]
    fn preset_tail_bound_and_markov_inequality() {
        let g = grid(64);
        for n in [5, 10, 20] {
            let s = truncate_point_process(&PointProcessSpec::preset(n), &g, &RngContract::new(42), 2000).unwrap();
            for eta in [0.25, 0.5, 1.0] {
                let row = s.tail_bound(eta).unwrap();
                assert!(row.empirical <= row.bound + 3.0 * row.stderr, "{row:?}");
                assert!(row.empirical <= row.markov + 3.0 * row.markov_stderr, "{row:?}");
            }
        }
    }
}
