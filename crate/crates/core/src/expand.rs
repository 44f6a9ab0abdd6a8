//! Compensators of the enlarged filtration.
//!
//! For a forward path `X` on `[0, T]` enlarged with its reversal, the level-`n`
//! compensator freezes the conditioning endpoint on each subdivision interval,
//!
//! `A^(n)_t = sum_i int_{t_i}^{t_{i+1} ^ t} score(T - t_i - s, X_s, X_{T - t_i}) ds`,
//!
//! and its mesh limit is `A_t = int_0^t score(T - 2s, X_s, X_{T - s}) ds`.
//! All `ds`-integrals use the left endpoint of each grid step.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{ScoreFunction, ScoreValue};
use crate::error::{Error, Result};
use crate::grid::{Subdivision, TimeGrid};
use crate::par;
use crate::path::{Path, PathEnsemble};
use crate::regress::pairwise_mean;
use crate::simulate::SdeCoefficients;
use crate::stats::{trend_test, TrendTest};

/// Which process enlarges the Brownian filtration.
#[derive(Debug, Clone)]
pub enum ScenarioVariant {
    BrownianReversal,
    DiffusionReversal(SdeCoefficients),
    /// Noise level `1 / sqrt(n)` added to `B_T`.
    NoisyTerminal {
        n: u64,
    },
    PointProcess,
}

#[derive(Debug, Clone)]
pub struct ExpansionScenario {
    pub variant: ScenarioVariant,
    pub t_max: f64,
}

impl ExpansionScenario {
    pub fn new(variant: ScenarioVariant, t_max: f64, horizon: f64) -> Result<Self> {
        let reversal = matches!(
            variant,
            ScenarioVariant::BrownianReversal | ScenarioVariant::DiffusionReversal(_)
        );
        if !(t_max > 0.0) || t_max > horizon {
            return Err(Error::invalid(format!("t_max = {t_max} outside (0, {horizon}]")));
        }
        if reversal && t_max >= horizon / 2.0 {
            return Err(Error::invalid(format!(
                "reversal scenarios need t_max < T/2 = {}, got {t_max}",
                horizon / 2.0
            )));
        }
        Ok(Self { variant, t_max })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorResult {
    /// `A` at the grid times up to `t_max`, starting at 0.
    pub trajectory: Path,
    /// Contribution of each subdivision interval (a single entry for the
    /// limit compensator).
    pub contributions: Vec<f64>,
    pub total_variation: f64,
    /// Dyadic level of the subdivision; `None` for the limit.
    pub level: Option<u32>,
}

impl CompensatorResult {
    /// Running total variation at each trajectory point.
    pub fn running_total_variation(&self) -> Vec<f64> {
        let v = self.trajectory.values();
        let mut out = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in v.windows(2) {
            acc += (w[1] - w[0]).abs();
            out.push(acc);
        }
        out
    }
}

fn check_reversal_horizon(x: &Path, t_max: f64) -> Result<(f64, usize)> {
    let horizon = x.grid().horizon();
    if !(t_max > 0.0) || t_max >= horizon / 2.0 {
        return Err(Error::invalid(format!(
            "t_max = {t_max} must lie in (0, T/2) with T = {horizon}"
        )));
    }
    let end = x
        .grid()
        .index_at_or_before(t_max)
        .filter(|&e| e > 0)
        .ok_or_else(|| Error::invalid(format!("t_max = {t_max} is shorter than one grid step")))?;
    Ok((horizon, end))
}

fn with_context(e: Error, ctx: String) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{ctx}: {m}")),
        Error::DomainViolation(m) => Error::DomainViolation(format!("{ctx}: {m}")),
        Error::NumericalFailure { stage, detail } => Error::NumericalFailure {
            stage,
            detail: format!("{ctx}: {detail}"),
        },
    }
}

/// Memoises non-closed-form score evaluations by exact `(t, x, y)` bits.
struct ScoreCache<'a> {
    score: &'a ScoreFunction,
    memo: Option<RefCell<HashMap<[u64; 3], ScoreValue>>>,
}

impl<'a> ScoreCache<'a> {
    fn new(score: &'a ScoreFunction) -> Self {
        Self {
            score,
            memo: (!score.is_closed_form()).then(|| RefCell::new(HashMap::new())),
        }
    }

    fn value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let Some(memo) = &self.memo else {
            return self.score.value(t, x, y);
        };
        let key = [t.to_bits(), x.to_bits(), y.to_bits()];
        if let Some(v) = memo.borrow().get(&key) {
            return Ok(v.value);
        }
        let v = self.score.evaluate(t, x, y)?;
        memo.borrow_mut().insert(key, v);
        Ok(v.value)
    }
}

/// Left-endpoint integral of `integrand(j)` (value at grid index `j`) over
/// grid steps `0..end`, with per-interval contributions split at `anchors`.
fn integrate(
    grid: &Arc<TimeGrid>,
    end: usize,
    anchors: &[usize],
    level: Option<u32>,
    mut integrand: impl FnMut(usize) -> Result<f64>,
) -> Result<CompensatorResult> {
    let times = grid.times();
    let mut values = Vec::with_capacity(end + 1);
    values.push(0.0);
    let mut contributions = vec![0.0; anchors.len().saturating_sub(1).max(1)];
    let mut k = 0;
    let mut acc = 0.0;
    for j in 0..end {
        while k + 1 < anchors.len() && anchors[k + 1] <= j {
            k += 1;
        }
        let f = integrand(j)?;
        if !f.is_finite() {
            return Err(Error::numerical(
                "compensator",
                format!("integrand {f} at s = {}", times[j]),
            ));
        }
        let inc = f * (times[j + 1] - times[j]);
        acc += inc;
        let slot = k.min(contributions.len() - 1);
        contributions[slot] += inc;
        values.push(acc);
    }
    let traj_grid = Arc::new(TimeGrid::new(times[..=end].to_vec())?);
    let trajectory = Path::new(traj_grid, values)?;
    let total_variation = total_variation(trajectory.values());
    Ok(CompensatorResult {
        trajectory,
        contributions,
        total_variation,
        level,
    })
}

/// Sum of absolute increments; for a monotone sequence this is exactly
/// `|last - first|`.
fn total_variation(v: &[f64]) -> f64 {
    let up = v.windows(2).all(|w| w[1] >= w[0]);
    let down = v.windows(2).all(|w| w[1] <= w[0]);
    if up || down {
        return (v[v.len() - 1] - v[0]).abs();
    }
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Level-`n` compensator along `subdivision` (a partition of `[0, t_max]`).
pub fn compensator_an(
    x: &Path,
    subdivision: &Subdivision,
    score: &ScoreFunction,
    t_max: f64,
) -> Result<CompensatorResult> {
    let (horizon, end) = check_reversal_horizon(x, t_max)?;
    let grid = x.shared_grid();
    if (subdivision.horizon() - t_max).abs() > 1e-9 * horizon {
        return Err(Error::invalid(format!(
            "subdivision ends at {} but t_max = {t_max}",
            subdivision.horizon()
        )));
    }
    let anchors = subdivision.snap_to(grid)?;
    let times = grid.times();
    let xs = x.values();
    // X_{T - t_i} for each anchor
    let rev: Vec<f64> = anchors
        .iter()
        .map(|&a| x.value_at(horizon - times[a]))
        .collect::<Result<_>>()?;
    let cache = ScoreCache::new(score);
    let mut k = 0;
    integrate(grid, end, &anchors, Some(subdivision.level()), |j| {
        while k + 1 < anchors.len() && anchors[k + 1] <= j {
            k += 1;
        }
        let ti = times[anchors[k]];
        let s = times[j];
        cache
            .value(horizon - ti - s, xs[j], rev[k])
            .map_err(|e| with_context(e, format!("interval {k}, s = {s}")))
    })
}

/// The mesh limit `int_0^t score(T - 2s, X_s, X_{T - s}) ds` for `t <= t_max`.
pub fn compensator_limit(x: &Path, score: &ScoreFunction, t_max: f64) -> Result<CompensatorResult> {
    let (horizon, end) = check_reversal_horizon(x, t_max)?;
    let grid = x.shared_grid();
    let times = grid.times();
    let xs = x.values();
    let cache = ScoreCache::new(score);
    integrate(grid, end, &[0, end], None, |j| {
        let s = times[j];
        cache
            .value(horizon - 2.0 * s, xs[j], x.value_at(horizon - s)?)
            .map_err(|e| with_context(e, format!("s = {s}")))
    })
}

/// Left-endpoint integral of an arbitrary adapted drift `drift(j, s)` over
/// grid steps up to `t_max`.
pub fn drift_compensator(
    grid: &Arc<TimeGrid>,
    t_max: f64,
    mut drift: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<CompensatorResult> {
    let end = grid
        .index_at_or_before(t_max)
        .filter(|&e| e > 0)
        .ok_or_else(|| Error::invalid(format!("t_max = {t_max} is not inside the grid")))?;
    let times = grid.times().to_vec();
    integrate(grid, end, &[0, end], None, |j| drift(j, times[j]))
}

/// `(b_rev - b_s) / (1 - 2s)`, the drift of `B` in its filtration enlarged
/// with the reversed path.
pub fn brownian_reversal_drift(s: f64, b_s: f64, b_rev: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&s) {
        return Err(Error::invalid(format!("reversal drift needs 0 <= s < 1/2, got {s}")));
    }
    Ok((b_rev - b_s) / (1.0 - 2.0 * s))
}

/// `(tau_n - b_s) / ((T - s) + 1/n)` for `tau_n = B_T + N / sqrt(n)`.
pub fn noisy_terminal_drift(s: f64, tau_n: f64, b_s: f64, n: u64, horizon: f64) -> Result<f64> {
    if !(s >= 0.0 && s < horizon) {
        return Err(Error::invalid(format!(
            "noisy-terminal drift needs 0 <= s < T, got s = {s}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("noise index n must be positive"));
    }
    Ok((tau_n - b_s) / ((horizon - s) + 1.0 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityRow {
    pub level: u32,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityDiagnostic {
    pub rows: Vec<IntegrabilityRow>,
    /// Slope of estimate against level (present with three or more levels).
    pub trend: Option<TrendTest>,
}

/// Monte Carlo `E int |dA^(n)|` per level.
pub fn integrability_diagnostic(
    ensemble: &PathEnsemble,
    subdivisions: &[Subdivision],
    score: &ScoreFunction,
    t_max: f64,
) -> Result<IntegrabilityDiagnostic> {
    if ensemble.path_count() < 100 {
        return Err(Error::invalid(format!(
            "integrability diagnostic needs at least 100 paths, got {}",
            ensemble.path_count()
        )));
    }
    let mut rows = Vec::with_capacity(subdivisions.len());
    for sub in subdivisions {
        let tv = par::try_map_range(ensemble.path_count(), |j| {
            compensator_an(ensemble.path(j), sub, score, t_max).map(|r| r.total_variation)
        })?;
        let n = tv.len() as f64;
        let m = pairwise_mean(&tv);
        let var = pairwise_mean(&tv.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>()) * n / (n - 1.0);
        rows.push(IntegrabilityRow {
            level: sub.level(),
            estimate: m,
            stderr: (var / n).sqrt(),
        });
    }
    let trend = if rows.len() >= 3 {
        let x: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
        Some(trend_test(&x, &y)?)
    } else {
        None
    };
    Ok(IntegrabilityDiagnostic { rows, trend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::gaussian_score;
    use crate::grid::{make_dyadic_subdivision, make_uniform_grid};
    use crate::quadrature::adaptive_simpson;
    use crate::rng::RngContract;
    use crate::simulate::{brownian_ensemble, sample_brownian};
    use proptest::prelude::*;

    fn grid(steps: usize) -> Arc<TimeGrid> {
        Arc::new(make_uniform_grid(1.0, steps).unwrap())
    }

    #[test]
    fn drift_examples() {
        assert_eq!(brownian_reversal_drift(0.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(brownian_reversal_drift(0.3, 0.4, 0.4).unwrap(), 0.0);
        assert_eq!(
            brownian_reversal_drift(0.25, 0.2, 0.7).unwrap(),
            gaussian_score(0.5, 0.2, 0.7).unwrap()
        );
        assert!((brownian_reversal_drift(0.25, 0.2, 0.7).unwrap() - 1.0).abs() < 1e-15);
        assert!(brownian_reversal_drift(0.5, 0.0, 1.0).is_err());
        assert_eq!(noisy_terminal_drift(0.3, 0.2, 0.2, 9, 1.0).unwrap(), 0.0);
        // conditional law of tau_n given B_s: N(b_s, (T - s) + 1/n)
        let (s, tau, b, n, t) = (0.5, 1.0, 0.2, 4u64, 1.0);
        let var = (t - s) + 1.0 / n as f64;
        let direct = -(b - tau) / var;
        assert!((noisy_terminal_drift(s, tau, b, n, t).unwrap() - direct).abs() < 1e-15);
        assert!((noisy_terminal_drift(s, tau, b, n, t).unwrap() - 0.8 / 0.75).abs() < 1e-15);
        let limit = noisy_terminal_drift(0.2, 0.9, 0.1, u64::MAX, 1.0).unwrap();
        assert!((limit - 0.8 / 0.8).abs() < 1e-12);
        assert!(noisy_terminal_drift(1.0, 0.0, 0.0, 1, 1.0).is_err());
    }

    #[test]
    fn zero_score_gives_zero_compensator() {
        let g = grid(256);
        let b = sample_brownian(&g, &RngContract::new(1), 0);
        let r = compensator_an(
            &b,
            &make_dyadic_subdivision(3, 0.4).unwrap(),
            &ScoreFunction::zero(),
            0.4,
        )
        .unwrap();
        assert!(r.trajectory.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.total_variation, 0.0);
        assert_eq!(r.contributions.len(), 8);
    }

    #[test]
    fn limit_on_linear_and_symmetric_paths() {
        let g = grid(1024);
        let lin = Path::from_fn(g.clone(), |t| t).unwrap();
        let r = compensator_limit(&lin, &ScoreFunction::gaussian(), 0.4).unwrap();
        for (t, a) in r.trajectory.grid().times().iter().zip(r.trajectory.values()) {
            assert!((a - t).abs() < 1e-12, "{t}: {a}");
        }
        let sym = Path::from_fn(g, |t| (t * (1.0 - t)).sin()).unwrap();
        let r = compensator_limit(&sym, &ScoreFunction::gaussian(), 0.4).unwrap();
        assert!(r.trajectory.sup_abs() < 1e-12);
    }

    #[test]
    fn horizon_is_enforced() {
        let g = grid(64);
        let b = sample_brownian(&g, &RngContract::new(1), 0);
        assert!(compensator_limit(&b, &ScoreFunction::gaussian(), 0.5).is_err());
        let sub = make_dyadic_subdivision(2, 0.5).unwrap();
        assert!(compensator_an(&b, &sub, &ScoreFunction::gaussian(), 0.5).is_err());
        let sub = make_dyadic_subdivision(2, 0.3).unwrap();
        assert!(compensator_an(&b, &sub, &ScoreFunction::gaussian(), 0.4).is_err());
    }

    #[test]
    fn single_interval_is_one_plain_quadrature() {
        let g = grid(512);
        let b = sample_brownian(&g, &RngContract::new(2), 3);
        let sub = Subdivision::new(vec![0.0, 0.4], 0).unwrap();
        let r = compensator_an(&b, &sub, &ScoreFunction::gaussian(), 0.4).unwrap();
        let times = g.times();
        let mut acc = 0.0;
        let end = g.index_at_or_before(0.4).unwrap();
        for j in 0..end {
            acc += (b.last() - b.values()[j]) / (1.0 - times[j]) * (times[j + 1] - times[j]);
            assert!((r.trajectory.values()[j + 1] - acc).abs() < 1e-13);
        }
        assert_eq!(r.contributions.len(), 1);
    }

    #[test]
    fn level_three_matches_brute_force_double_sum() {
        let g = grid(1024);
        let b = sample_brownian(&g, &RngContract::new(42), 0);
        let sub = make_dyadic_subdivision(3, 0.4).unwrap();
        let r = compensator_an(&b, &sub, &ScoreFunction::gaussian(), 0.4).unwrap();
        // independent re-summation: A_t = sum_i sum_{s in [t_i, t_{i+1}), s < t}
        let times = g.times();
        let pts = sub.points();
        for (idx, &t) in r.trajectory.grid().times().iter().enumerate() {
            let mut total = 0.0;
            for i in 0..pts.len() - 1 {
                let ti = times[g.index_at_or_before(pts[i]).unwrap()];
                let ti1 = times[g.index_at_or_before(pts[i + 1]).unwrap()];
                let y = b.value_at(1.0 - ti).unwrap();
                for j in 0..times.len() - 1 {
                    let s = times[j];
                    if s >= ti && s < ti1 && s < t - 1e-12 {
                        total += (y - b.values()[j]) / (1.0 - ti - s) * (times[j + 1] - s);
                    }
                }
            }
            assert!((r.trajectory.values()[idx] - total).abs() < 1e-12, "t={t}");
        }
        let tv: f64 = r.trajectory.values().windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        assert!((tv - r.total_variation).abs() < 1e-12);
        let sum: f64 = r.contributions.iter().sum();
        assert!((sum - r.trajectory.last()).abs() < 1e-12);
    }

    #[test]
    fn limit_matches_quadrature_of_the_piecewise_integrand() {
        let g = grid(1024);
        let b = sample_brownian(&g, &RngContract::new(42), 0);
        let r = compensator_limit(&b, &ScoreFunction::gaussian(), 0.4).unwrap();
        // the left-endpoint sum is the exact integral of the step function
        let h = 1.0 / 1024.0;
        let step = |s: f64| {
            let j = (s / h).floor() as usize;
            let sj = g.times()[j];
            (b.values()[1024 - j] - b.values()[j]) / (1.0 - 2.0 * sj)
        };
        let end = g.index_at_or_before(0.4).unwrap();
        let oracle: f64 = (0..end)
            .map(|j| {
                let (a, c) = (j as f64 * h, (j + 1) as f64 * h);
                adaptive_simpson(&step, a + 1e-9 * h, c - 1e-9 * h, 1e-14, 10) * h / (h * (1.0 - 2e-9))
            })
            .sum::<f64>();
        assert!(
            (r.trajectory.last() - oracle).abs() < 1e-10,
            "{} vs {oracle}",
            r.trajectory.last()
        );
    }

    #[test]
    fn reversal_drift_equals_gaussian_score_on_paths() {
        let g = grid(256);
        let b = sample_brownian(&g, &RngContract::new(5), 1);
        for (j, &s) in g.times().iter().enumerate().take_while(|(_, s)| **s < 0.5) {
            let rev = b.value_at(1.0 - s).unwrap();
            assert_eq!(
                brownian_reversal_drift(s, b.values()[j], rev).unwrap(),
                gaussian_score(1.0 - 2.0 * s, b.values()[j], rev).unwrap()
            );
        }
    }

    #[test]
    fn telescoping_sup_error_shrinks_with_the_mesh() {
        let g = grid(1024);
        let ens = brownian_ensemble(&g, RngContract::new(7), 100).unwrap();
        let score = ScoreFunction::gaussian();
        let mut shrinking = 0;
        for p in ens.paths() {
            let lim = compensator_limit(p, &score, 0.4).unwrap();
            let errs: Vec<f64> = (2..=6)
                .map(|l| {
                    let r = compensator_an(p, &make_dyadic_subdivision(l, 0.4).unwrap(), &score, 0.4).unwrap();
                    r.trajectory.sup_distance(&lim.trajectory).unwrap()
                })
                .collect();
            shrinking += errs.windows(2).filter(|w| w[1] < w[0]).count();
        }
        // 100 paths x 4 successive refinements
        assert!(shrinking >= 360, "{shrinking} of 400");
    }

    #[test]
    fn increments_are_bounded_by_step_times_integrand() {
        let g = grid(512);
        let b = sample_brownian(&g, &RngContract::new(8), 0);
        let r = compensator_limit(&b, &ScoreFunction::gaussian(), 0.4).unwrap();
        let v = r.trajectory.values();
        for j in 0..v.len() - 1 {
            let s = g.times()[j];
            let f = ((b.value_at(1.0 - s).unwrap() - b.values()[j]) / (1.0 - 2.0 * s)).abs();
            assert!((v[j + 1] - v[j]).abs() <= g.step(j) * f * (1.0 + 1e-12));
        }
    }

    #[test]
    fn monotone_trajectory_variation_is_exact() {
        let g = grid(1000);
        let x = Path::from_fn(g, |t| t * t).unwrap();
        let r = compensator_limit(&x, &ScoreFunction::user("one", |_, _, _| 1.0), 0.4).unwrap();
        assert_eq!(r.total_variation, (r.trajectory.last() - r.trajectory.first()).abs());
        let running = r.running_total_variation();
        assert!((running.last().unwrap() - r.total_variation).abs() < 1e-12);
    }

    #[test]
    fn integrability_with_zero_score_and_guards() {
        let g = grid(128);
        let ens = brownian_ensemble(&g, RngContract::new(3), 100).unwrap();
        let subs: Vec<_> = (2..=4).map(|l| make_dyadic_subdivision(l, 0.4).unwrap()).collect();
        let d = integrability_diagnostic(&ens, &subs, &ScoreFunction::zero(), 0.4).unwrap();
        assert!(d.rows.iter().all(|r| r.estimate == 0.0 && r.stderr == 0.0));
        let small = brownian_ensemble(&g, RngContract::new(3), 99).unwrap();
        assert!(integrability_diagnostic(&small, &subs, &ScoreFunction::zero(), 0.4).is_err());
    }

    #[test]
    fn integrability_is_bounded_by_the_phi_integral() {
        let g = grid(1024);
        let ens = brownian_ensemble(&g, RngContract::new(11), 400).unwrap();
        let subs: Vec<_> = (2..=6).map(|l| make_dyadic_subdivision(l, 0.4).unwrap()).collect();
        let d = integrability_diagnostic(&ens, &subs, &ScoreFunction::gaussian(), 0.4).unwrap();
        let bound = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        for r in &d.rows {
            assert!(r.estimate <= bound + 3.0 * r.stderr, "{r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn variation_is_sum_of_absolute_increments(seed in 0u64..10_000, level in 0u32..6) {
            let g = grid(256);
            let b = sample_brownian(&g, &RngContract::new(seed), 0);
            let r = compensator_an(&b, &make_dyadic_subdivision(level, 0.4).unwrap(), &ScoreFunction::gaussian(), 0.4).unwrap();
            let tv: f64 = r.trajectory.values().windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            prop_assert!((tv - r.total_variation).abs() <= 1e-12 * (1.0 + tv));
            prop_assert_eq!(r.trajectory.first(), 0.0);
        }
    }
}
