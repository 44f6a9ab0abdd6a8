//! The six scenarios. Each returns a typed outcome (used directly by the
//! acceptance tests) that converts into tables, figures and checks.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use filtex_core::converge::{
    approximate_stopping_time, truncate_point_process, weak_convergence_report, Observation, PointProcessSpec,
    SigmaFieldSpec, TailBoundRow, WeakConvergenceRow,
};
use filtex_core::density::{brownian_phi, estimate_phi, fit_score_bound, ScoreFunction, ZmirouConfig, ZmirouKernel};
use filtex_core::expand::{
    compensator_an, compensator_limit, drift_compensator, integrability_diagnostic, noisy_terminal_drift,
    CompensatorResult, IntegrabilityDiagnostic,
};
use filtex_core::mgtest::{increment_orthogonality_test, qv_test, MartingaleTestReport, OrthogonalityConfig};
use filtex_core::simulate::{brownian_ensemble, euler_maruyama, reverse_path};
use filtex_core::stats::mean_stderr;
use filtex_core::{make_dyadic_subdivision, make_uniform_grid, Error, Path, PathEnsemble, RngContract, TimeGrid};

use crate::config::{Scenario, ScenarioConfig};
use crate::svg::{Chart, Series};
use crate::tables::{mgtest_rows, CompensatorRow, ConvergenceRow};
use crate::{at_stage, Check, RunError, ScenarioOutput, Timings};

/// Lags at which `phi` is estimated.
pub const PHI_LAGS: [f64; 3] = [0.05, 0.1, 0.25];
/// Stream tag for the independent Gaussian noise of the noisy-terminal scenario.
const NOISE_TAG: u64 = 1;
/// Stream tag for the inner Monte Carlo of the Zmirou score.
const SCORE_TAG: u64 = 2;

pub fn run(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<ScenarioOutput, RunError> {
    match cfg.scenario {
        Scenario::BrownianReversal | Scenario::DiffusionReversal => Ok(reversal(cfg, timings)?.output(cfg)),
        Scenario::NoisyTerminal => Ok(noisy_terminal(cfg, timings)?.output(cfg)),
        Scenario::PointProcess => Ok(point_process(cfg, timings)?.output(cfg)),
        Scenario::WeakConvergence => Ok(weak_convergence(cfg, timings)?.output(cfg)),
        Scenario::StoppingTime => Ok(stopping_time(cfg, timings)?.output(cfg)),
    }
}

fn unit_grid(cfg: &ScenarioConfig) -> Result<Arc<TimeGrid>, RunError> {
    Ok(Arc::new(at_stage("grid", make_uniform_grid(1.0, cfg.grid_steps))?))
}

fn brownian(cfg: &ScenarioConfig, grid: &Arc<TimeGrid>) -> Result<PathEnsemble, RunError> {
    at_stage(
        "simulate",
        brownian_ensemble(grid, RngContract::new(cfg.seed), cfg.paths),
    )
}

fn per_path<T: Send>(
    n: usize,
    stage: &str,
    f: impl Fn(usize) -> filtex_core::Result<T> + Sync + Send,
) -> Result<Vec<T>, RunError> {
    at_stage(stage, (0..n).into_par_iter().map(f).collect())
}

/// `X - A` path by path on the compensators' (truncated) grid.
fn subtract(x: &PathEnsemble, comps: &[CompensatorResult]) -> Result<PathEnsemble, RunError> {
    let grid = Arc::new(comps[0].trajectory.grid().clone());
    let paths = x
        .paths()
        .iter()
        .zip(comps)
        .map(|(p, c)| {
            let v = p
                .values()
                .iter()
                .zip(c.trajectory.values())
                .map(|(a, b)| a - b)
                .collect();
            Path::new(Arc::clone(&grid), v)
        })
        .collect::<filtex_core::Result<Vec<_>>>();
    at_stage(
        "martingale part",
        paths.and_then(|p| PathEnsemble::from_parts(grid, p, x.indices().to_vec(), x.seed())),
    )
}

fn subset(x: &PathEnsemble, n: usize) -> Result<PathEnsemble, RunError> {
    at_stage(
        "subset",
        PathEnsemble::from_parts(
            Arc::clone(x.shared_grid()),
            x.paths()[..n].to_vec(),
            x.indices()[..n].to_vec(),
            x.seed(),
        ),
    )
}

fn compensator_rows(level: &str, c: &CompensatorResult) -> Vec<CompensatorRow> {
    let tv = c.running_total_variation();
    c.trajectory
        .grid()
        .times()
        .iter()
        .zip(c.trajectory.values())
        .zip(tv)
        .map(|((&t, &a), tv)| CompensatorRow {
            level: level.into(),
            t,
            a_value: a,
            tv_running: tv,
        })
        .collect()
}

fn trajectory_series(name: &str, p: &Path) -> Series {
    Series::line(
        name,
        p.grid()
            .times()
            .iter()
            .copied()
            .zip(p.values().iter().copied())
            .collect(),
    )
}

/// `-log10 p` per test time, capped at 16.
fn significance_series(name: &str, r: &MartingaleTestReport) -> Series {
    Series::dots(
        name,
        r.per_time
            .iter()
            .map(|s| (s.t, -s.p_value.max(1e-16).log10()))
            .collect(),
    )
}

pub fn non_increasing_up_to_one_inversion(v: &[f64]) -> bool {
    v.windows(2).filter(|w| w[1] > w[0]).count() <= 1
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn martingale_check(name: &str, r: &MartingaleTestReport, expect_pass: bool) -> Check {
    let min_p = r.per_time.iter().map(|s| s.p_value).fold(1.0f64, f64::min);
    let mut c = Check::new(
        name,
        r.passed() == expect_pass,
        format!(
            "{} verdict {:?} (smallest p = {min_p:.3e}, alpha = {})",
            r.config.test, r.verdict, r.config.alpha
        ),
    );
    c.observed = Some(min_p);
    c.threshold = Some(r.config.alpha);
    c
}

fn no_upward_trend(d: &IntegrabilityDiagnostic) -> Option<Check> {
    d.trend.map(|t| {
        let up = t.slope > 0.0 && t.p_value <= 0.01;
        let mut c = Check::new(
            "integrability has no upward trend across levels",
            !up,
            format!("slope {:.3e}, two-sided p = {:.3}", t.slope, t.p_value),
        );
        c.observed = Some(t.p_value);
        c.threshold = Some(0.01);
        c
    })
}

// ---------------------------------------------------------------- reversal

#[derive(Debug, Clone, Serialize)]
pub struct SupErrorRow {
    pub level: u32,
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiRow {
    pub lag: f64,
    /// Lag after snapping both times to the grid.
    pub grid_lag: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `sqrt(2/pi) / sqrt(grid_lag)` in the Brownian case.
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReversalOutcome {
    pub score: String,
    pub b_minus_a: MartingaleTestReport,
    pub raw_b: MartingaleTestReport,
    pub qv: MartingaleTestReport,
    pub sup_error: Vec<SupErrorRow>,
    pub sup_error_paths: usize,
    /// Median over paths and successive levels of the sup-error ratio.
    pub median_successive_ratio: Option<f64>,
    pub integrability: IntegrabilityDiagnostic,
    pub phi: Vec<PhiRow>,
    /// Fitted `M` in `|score| <= M (1 + |s(y) - s(x)| / t)` (diffusion only).
    pub score_bound: Option<f64>,
    #[serde(skip)]
    pub path0: Vec<(String, CompensatorResult)>,
}

fn reversal_specs(times: &[f64], h: f64) -> Vec<SigmaFieldSpec> {
    let names: Vec<String> = ["dX", "dZ", "X", "Z-X"].iter().map(|s| s.to_string()).collect();
    times
        .iter()
        .map(|&t| {
            SigmaFieldSpec::new(format!("reversal@{t}"), t, names.clone(), move |x, z| {
                let z = z.ok_or_else(|| Error::InvalidArgument("reversal features need Z".into()))?;
                let (xt, xl) = (x.value_at(t)?, x.value_at(t - h)?);
                let (zt, zl) = (z.value_at(t)?, z.value_at(t - h)?);
                Ok(vec![xt - xl, zt - zl, xt, zt - xt])
            })
        })
        .collect()
}

/// Brownian or diffusion reversal: `B - A` with `A` the limit compensator
/// of `X` enlarged with `Z_t = X_{1-t}`.
pub fn reversal(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<ReversalOutcome, RunError> {
    let grid = unit_grid(cfg)?;
    let b = timings.time("simulate", || brownian(cfg, &grid))?;
    let diffusion = cfg.scenario == Scenario::DiffusionReversal;
    let (x, score, phi_score, kernel) = if diffusion {
        let coeffs = cfg.coefficients()?;
        let x = timings.time("simulate", || {
            at_stage("euler", b.map(|_, p| euler_maruyama(&coeffs, 0.0, p, &grid)))
        })?;
        let zcfg = ZmirouConfig {
            inner_samples: cfg.inner_samples,
            bridge_nodes: cfg.bridge_nodes,
            h_variant: cfg.h_variant()?,
            ..ZmirouConfig::default()
        };
        let kernel = Arc::new(timings.time("density", || {
            at_stage("zmirou kernel", ZmirouKernel::new(&coeffs, zcfg))
        })?);
        let seed = RngContract::new(cfg.seed).derive(SCORE_TAG).master_seed();
        let plain = ScoreFunction::zmirou(Arc::clone(&kernel), seed);
        (x, plain.sigma_weighted(&coeffs), plain, Some(kernel))
    } else {
        (b.clone(), ScoreFunction::gaussian(), ScoreFunction::gaussian(), None)
    };
    let z = at_stage("reverse", x.map(|_, p| reverse_path(p, 1.0)))?;
    let n = cfg.paths;
    let limits = timings.time("compensator", || {
        per_path(n, "limit compensator", |j| {
            compensator_limit(x.path(j), &score, cfg.t_max)
        })
    })?;
    let m = subtract(&b, &limits)?;
    let obs = at_stage("observation", Observation::with_expansion(&x, &z))?;
    let specs = reversal_specs(&cfg.test_times, cfg.lag());
    let ocfg = OrthogonalityConfig {
        h: cfg.lag(),
        alpha: cfg.alpha,
        t_max: cfg.t_max,
    };
    let (b_minus_a, raw_b) = timings.time("mgtest", || -> Result<_, RunError> {
        Ok((
            at_stage(
                "orthogonality B - A",
                increment_orthogonality_test(&m, &obs, &specs, &ocfg),
            )?,
            at_stage("orthogonality B", increment_orthogonality_test(&b, &obs, &specs, &ocfg))?,
        ))
    })?;
    let qv = at_stage(
        "quadratic variation",
        qv_test(&m, cfg.t_max, cfg.qv_tolerance, cfg.alpha),
    )?;

    let subs = cfg
        .levels
        .iter()
        .map(|&l| at_stage("subdivision", make_dyadic_subdivision(l, cfg.t_max)))
        .collect::<Result<Vec<_>, _>>()?;
    let k = cfg.sup_paths.min(n);
    let errors: Vec<Vec<f64>> = timings.time("compensator levels", || {
        per_path(k, "level-n compensator", |j| {
            subs.iter()
                .map(|s| {
                    compensator_an(x.path(j), s, &score, cfg.t_max)?
                        .trajectory
                        .sup_distance(&limits[j].trajectory)
                })
                .collect()
        })
    })?;
    let sup_error = subs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let col: Vec<f64> = errors.iter().map(|e| e[i]).collect();
            let (mean, stderr) = mean_stderr(&col);
            SupErrorRow {
                level: s.level(),
                mean,
                stderr,
                median: median(col).unwrap_or(f64::NAN),
            }
        })
        .collect();
    let ratios: Vec<f64> = errors
        .iter()
        .flat_map(|e| {
            e.windows(2)
                .filter(|w| w[0] > 0.0)
                .map(|w| w[1] / w[0])
                .collect::<Vec<_>>()
        })
        .collect();
    let mut path0 = Vec::new();
    for s in &subs {
        path0.push((
            s.level().to_string(),
            at_stage("level-n compensator", compensator_an(x.path(0), s, &score, cfg.t_max))?,
        ));
    }
    path0.push(("limit".to_string(), limits[0].clone()));

    let integ_ens = if diffusion { subset(&x, k)? } else { x.clone() };
    let integrability = timings.time("integrability", || {
        at_stage(
            "integrability",
            integrability_diagnostic(&integ_ens, &subs, &score, cfg.t_max),
        )
    })?;
    let phi = timings.time("phi", || {
        PHI_LAGS
            .iter()
            .map(|&lag| {
                let (s, t) = (1.0 - lag, 1.0);
                let (estimate, stderr) = at_stage("phi", estimate_phi(&phi_score, &x, s, t))?;
                let times = grid.times();
                let grid_lag =
                    times[grid.index_at_or_before(t).unwrap_or(0)] - times[grid.index_at_or_before(s).unwrap_or(0)];
                Ok(PhiRow {
                    lag,
                    grid_lag,
                    estimate,
                    stderr,
                    oracle: (!diffusion).then(|| brownian_phi(grid_lag)),
                })
            })
            .collect::<Result<Vec<_>, RunError>>()
    })?;
    let score_bound = match &kernel {
        Some(k) => {
            let mut sweep = Vec::new();
            for &t in &[0.1, 0.25, 0.5] {
                for &xv in &[-1.0, 0.0, 1.0] {
                    for &yv in &[-1.0, 0.0, 1.0] {
                        sweep.push((t, xv, yv));
                    }
                }
            }
            Some(at_stage(
                "score bound",
                fit_score_bound(&phi_score, k.lamperti(), &sweep),
            )?)
        }
        None => None,
    };
    Ok(ReversalOutcome {
        score: score.label().to_string(),
        b_minus_a,
        raw_b,
        qv,
        sup_error,
        sup_error_paths: k,
        median_successive_ratio: median(ratios),
        integrability,
        phi,
        score_bound,
        path0,
    })
}

impl ReversalOutcome {
    pub fn checks(&self, cfg: &ScenarioConfig) -> Vec<Check> {
        let mut checks = vec![
            martingale_check("B - A passes the increment-orthogonality test", &self.b_minus_a, true),
            martingale_check("raw B fails the increment-orthogonality test", &self.raw_b, false),
            martingale_check("quadratic variation of B - A matches t_max", &self.qv, true),
        ];
        if self.sup_error.len() >= 2 {
            let means: Vec<f64> = self.sup_error.iter().map(|r| r.mean).collect();
            checks.push(Check::new(
                "sup |A^(n) - A| decreases with the level",
                means.windows(2).all(|w| w[1] < w[0]),
                format!("means {means:?}"),
            ));
            if let Some(r) = self.median_successive_ratio {
                checks.push(Check::at_most("median successive sup-error ratio", r, 0.9, true, ""));
            }
        }
        if cfg.scenario == Scenario::BrownianReversal {
            let bound = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
            let worst = self
                .integrability
                .rows
                .iter()
                .map(|r| r.estimate - 3.0 * r.stderr)
                .fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::at_most(
                "E int |dA^(n)| below 2 sqrt(2/pi) within 3 stderr",
                worst,
                bound,
                false,
                "observed is max over levels of estimate - 3 stderr",
            ));
            for p in &self.phi {
                if let Some(o) = p.oracle {
                    checks.push(Check::at_most(
                        format!("phi at lag {} within 3 stderr of sqrt(2/pi)/sqrt(lag)", p.lag),
                        (p.estimate - o).abs(),
                        3.0 * p.stderr,
                        false,
                        format!("estimate {:.5}, oracle {o:.5}, grid lag {}", p.estimate, p.grid_lag),
                    ));
                }
            }
        }
        checks.extend(no_upward_trend(&self.integrability));
        checks
    }

    pub fn output(self, cfg: &ScenarioConfig) -> ScenarioOutput {
        let mut out = ScenarioOutput {
            checks: self.checks(cfg),
            ..Default::default()
        };
        for (level, c) in &self.path0 {
            out.compensator.extend(compensator_rows(level, c));
        }
        out.mgtest.extend(mgtest_rows("B-A", &self.b_minus_a));
        out.mgtest.extend(mgtest_rows("B", &self.raw_b));
        out.mgtest.extend(mgtest_rows("B-A", &self.qv));
        for r in &self.sup_error {
            out.convergence.push(ConvergenceRow::new(
                "sup-error",
                r.level,
                "mean",
                r.mean,
                Some(r.stderr),
            ));
            out.convergence
                .push(ConvergenceRow::new("sup-error", r.level, "median", r.median, None));
        }
        if let Some(r) = self.median_successive_ratio {
            out.convergence.push(ConvergenceRow::new(
                "sup-error",
                "all",
                "median-successive-ratio",
                r,
                None,
            ));
        }
        for r in &self.integrability.rows {
            out.convergence.push(ConvergenceRow::new(
                "integrability",
                r.level,
                "mean-total-variation",
                r.estimate,
                Some(r.stderr),
            ));
        }
        for p in &self.phi {
            out.convergence.push(ConvergenceRow::new(
                "phi",
                p.grid_lag,
                "estimate",
                p.estimate,
                Some(p.stderr),
            ));
            if let Some(o) = p.oracle {
                out.convergence
                    .push(ConvergenceRow::new("phi", p.grid_lag, "oracle", o, None));
            }
        }
        let mut comp = Chart::new("Compensator along path 0", "t", "A_t");
        for (level, c) in &self.path0 {
            let name = if level == "limit" {
                "A (limit)".to_string()
            } else {
                format!("A^({level})")
            };
            comp = comp.with(trajectory_series(&name, &c.trajectory));
        }
        let alpha = cfg.alpha;
        let drift = Chart::new("Drift detection: increment orthogonality", "t", "-log10 p (Bonferroni)")
            .with(significance_series("B - A", &self.b_minus_a))
            .with(significance_series("B", &self.raw_b))
            .reference(-alpha.log10(), format!("alpha = {alpha}"));
        let sup = Chart::new("Mean sup |A^(n) - A|", "level n", "sup error").with(Series::dots(
            "mean",
            self.sup_error.iter().map(|r| (r.level as f64, r.mean)).collect(),
        ));
        out.figures = vec![
            ("compensator".into(), comp.render()),
            ("drift".into(), drift.render()),
            ("sup-error".into(), sup.render()),
        ];
        out.results.insert(cfg.scenario.name().into(), to_value(&self));
        out
    }
}

// ---------------------------------------------------------- noisy terminal

#[derive(Debug, Clone, Serialize)]
pub struct NoisyLevel {
    pub n: u64,
    pub test: MartingaleTestReport,
    /// Mean over paths of `sup_{t <= t_max} |A^n_t - A^bridge_t|`.
    pub bridge_distance: f64,
    pub bridge_distance_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoisyOutcome {
    pub levels: Vec<NoisyLevel>,
    /// Raw `B` against the finest noise level's information (expected to fail).
    pub raw_b: MartingaleTestReport,
    #[serde(skip)]
    pub path0: Vec<(String, CompensatorResult)>,
}

fn noisy_specs(times: &[f64], h: f64) -> Vec<SigmaFieldSpec> {
    let names: Vec<String> = ["B(t-2h)", "B(t-h)", "B(t)", "tau_n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    times
        .iter()
        .map(|&t| {
            SigmaFieldSpec::new(format!("noisy@{t}"), t, names.clone(), move |b, tau| {
                let tau = tau.ok_or_else(|| Error::InvalidArgument("noisy-terminal features need tau_n".into()))?;
                Ok(vec![
                    b.value_at(t - 2.0 * h)?,
                    b.value_at(t - h)?,
                    b.value_at(t)?,
                    tau.first(),
                ])
            })
        })
        .collect()
}

/// `B` enlarged initially with `tau_n = B_1 + N / sqrt(n)`.
pub fn noisy_terminal(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<NoisyOutcome, RunError> {
    let grid = unit_grid(cfg)?;
    let b = timings.time("simulate", || brownian(cfg, &grid))?;
    let noise_rng = RngContract::new(cfg.seed).derive(NOISE_TAG);
    let noise: Vec<f64> = (0..cfg.paths)
        .map(|j| {
            let mut r = noise_rng.stream(j as u64);
            r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let bridge = timings.time("compensator", || {
        per_path(cfg.paths, "bridge compensator", |j| {
            let p = b.path(j);
            let (v, b1) = (p.values(), p.last());
            drift_compensator(&grid, cfg.t_max, |i, s| Ok((b1 - v[i]) / (1.0 - s)))
        })
    })?;
    let point = Arc::new(at_stage("grid", TimeGrid::new(vec![0.0, 1.0]))?);
    let specs = noisy_specs(&cfg.test_times, cfg.lag());
    let ocfg = OrthogonalityConfig {
        h: cfg.lag(),
        alpha: cfg.alpha,
        t_max: cfg.t_max,
    };
    let mut levels = Vec::new();
    let mut path0 = Vec::new();
    let mut raw_b = None;
    for (idx, &n) in cfg.noise_levels.iter().enumerate() {
        let tau: Vec<f64> = (0..cfg.paths)
            .map(|j| b.path(j).last() + noise[j] / (n as f64).sqrt())
            .collect();
        let comps = timings.time("compensator", || {
            per_path(cfg.paths, "noisy-terminal compensator", |j| {
                let v = b.path(j).values();
                drift_compensator(&grid, cfg.t_max, |i, s| noisy_terminal_drift(s, tau[j], v[i], n, 1.0))
            })
        })?;
        let dist: Vec<f64> = at_stage(
            "bridge distance",
            comps
                .iter()
                .zip(&bridge)
                .map(|(a, c)| a.trajectory.sup_distance(&c.trajectory))
                .collect(),
        )?;
        let (bridge_distance, bridge_distance_stderr) = mean_stderr(&dist);
        let m = subtract(&b, &comps)?;
        let tau_paths = at_stage(
            "tau paths",
            tau.iter()
                .map(|&v| Path::constant(Arc::clone(&point), v))
                .collect::<filtex_core::Result<Vec<_>>>(),
        )?;
        let tau_ens = at_stage(
            "tau paths",
            PathEnsemble::from_parts(Arc::clone(&point), tau_paths, b.indices().to_vec(), b.seed()),
        )?;
        let obs = at_stage("observation", Observation::with_expansion(&b, &tau_ens))?;
        let test = timings.time("mgtest", || {
            at_stage(
                "orthogonality B - A^n",
                increment_orthogonality_test(&m, &obs, &specs, &ocfg),
            )
        })?;
        if idx + 1 == cfg.noise_levels.len() {
            raw_b = Some(timings.time("mgtest", || {
                at_stage("orthogonality B", increment_orthogonality_test(&b, &obs, &specs, &ocfg))
            })?);
        }
        path0.push((format!("n={n}"), comps[0].clone()));
        levels.push(NoisyLevel {
            n,
            test,
            bridge_distance,
            bridge_distance_stderr,
        });
    }
    path0.push(("bridge".into(), bridge[0].clone()));
    Ok(NoisyOutcome {
        levels,
        raw_b: raw_b.expect("noise_levels is non-empty"),
        path0,
    })
}

impl NoisyOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let mut checks: Vec<Check> = self
            .levels
            .iter()
            .map(|l| {
                martingale_check(
                    &format!("B - A^n passes the increment-orthogonality test at n = {}", l.n),
                    &l.test,
                    true,
                )
            })
            .collect();
        let d: Vec<f64> = self.levels.iter().map(|l| l.bridge_distance).collect();
        if d.len() >= 2 {
            checks.push(Check::new(
                "sup |A^n - A^bridge| decreases in n",
                d.windows(2).all(|w| w[1] < w[0]),
                format!("mean distances {d:?}"),
            ));
        }
        checks
    }

    pub fn output(self, cfg: &ScenarioConfig) -> ScenarioOutput {
        let mut out = ScenarioOutput {
            checks: self.checks(),
            ..Default::default()
        };
        for (level, c) in &self.path0 {
            out.compensator.extend(compensator_rows(level, c));
        }
        for l in &self.levels {
            out.mgtest.extend(mgtest_rows(&format!("B-A^n(n={})", l.n), &l.test));
            out.convergence.push(ConvergenceRow::new(
                "bridge-distance",
                l.n,
                "mean-sup",
                l.bridge_distance,
                Some(l.bridge_distance_stderr),
            ));
        }
        out.mgtest.extend(mgtest_rows("B", &self.raw_b));
        let mut comp = Chart::new("Noisy-terminal compensators along path 0", "t", "A_t");
        for (level, c) in &self.path0 {
            comp = comp.with(trajectory_series(level, &c.trajectory));
        }
        let alpha = cfg.alpha;
        let mut drift = Chart::new(
            "Drift detection with tau_n = B_1 + N/sqrt(n)",
            "t",
            "-log10 p (Bonferroni)",
        );
        for l in &self.levels {
            drift = drift.with(significance_series(&format!("B - A^n, n = {}", l.n), &l.test));
        }
        drift = drift
            .with(significance_series("B", &self.raw_b))
            .reference(-alpha.log10(), format!("alpha = {alpha}"));
        out.figures = vec![("compensator".into(), comp.render()), ("drift".into(), drift.render())];
        out.results.insert(cfg.scenario.name().into(), to_value(&self));
        out
    }
}

// ----------------------------------------------------------- point process

#[derive(Debug, Clone, Serialize)]
pub struct PointProcessLevel {
    pub tail: TailBoundRow,
    pub mean_sup_distance: f64,
    pub max_sup_distance: f64,
    /// Paths whose realised jumps all have index `<= n`.
    pub exact_paths: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointProcessOutcome {
    pub spec: String,
    pub eta: f64,
    pub levels: Vec<PointProcessLevel>,
    #[serde(skip)]
    pub path0: Vec<(String, Path)>,
}

/// Preset marked point process truncated at each configured `n`; every
/// truncation reuses the same draws.
pub fn point_process(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<PointProcessOutcome, RunError> {
    let grid = unit_grid(cfg)?;
    let rng = RngContract::new(cfg.seed);
    let base = PointProcessSpec::preset(cfg.truncations[0]);
    let mut levels = Vec::new();
    let mut path0 = Vec::new();
    for (i, &n) in cfg.truncations.iter().enumerate() {
        let sample = timings.time("simulate", || {
            at_stage(
                "point process",
                truncate_point_process(&base.with_truncation(n), &grid, &rng, cfg.paths),
            )
        })?;
        let tail = at_stage("tail bound", sample.tail_bound(cfg.eta))?;
        if i == 0 {
            path0.push(("full".to_string(), sample.full.path(0).clone()));
        }
        path0.push((format!("n={n}"), sample.truncated.path(0).clone()));
        levels.push(PointProcessLevel {
            tail,
            mean_sup_distance: mean_stderr(&sample.sup_distance).0,
            max_sup_distance: sample.sup_distance.iter().copied().fold(0.0, f64::max),
            exact_paths: sample.sup_distance.iter().filter(|&&d| d == 0.0).count(),
        });
    }
    Ok(PointProcessOutcome {
        spec: base.label.clone(),
        eta: cfg.eta,
        levels,
        path0,
    })
}

impl PointProcessOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let mut checks = Vec::new();
        for l in &self.levels {
            let t = &l.tail;
            checks.push(Check::at_most(
                format!("P(sup |N - N^n| >= eta) below the tail bound at n = {}", t.truncation),
                t.empirical,
                t.bound + 3.0 * t.stderr,
                false,
                format!("bound {:.5} + 3 stderr {:.5}", t.bound, 3.0 * t.stderr),
            ));
            checks.push(Check::at_most(
                format!("Markov inequality at n = {}", t.truncation),
                t.empirical,
                t.markov + 3.0 * t.markov_stderr,
                false,
                "",
            ));
        }
        checks
    }

    pub fn output(self, cfg: &ScenarioConfig) -> ScenarioOutput {
        let mut out = ScenarioOutput {
            checks: self.checks(),
            ..Default::default()
        };
        for (label, p) in &self.path0 {
            let mut tv = 0.0;
            let v = p.values();
            for (i, (&t, &a)) in p.grid().times().iter().zip(v).enumerate() {
                if i > 0 {
                    tv += (a - v[i - 1]).abs();
                }
                out.compensator.push(CompensatorRow {
                    level: label.clone(),
                    t,
                    a_value: a,
                    tv_running: tv,
                });
            }
        }
        for l in &self.levels {
            let t = &l.tail;
            let n = t.truncation;
            out.convergence.push(ConvergenceRow::new(
                "tail-bound",
                n,
                "empirical",
                t.empirical,
                Some(t.stderr),
            ));
            out.convergence
                .push(ConvergenceRow::new("tail-bound", n, "bound", t.bound, None));
            out.convergence.push(ConvergenceRow::new(
                "tail-bound",
                n,
                "markov",
                t.markov,
                Some(t.markov_stderr),
            ));
            out.convergence.push(ConvergenceRow::new(
                "sup-distance",
                n,
                "mean",
                l.mean_sup_distance,
                None,
            ));
            out.convergence
                .push(ConvergenceRow::new("sup-distance", n, "max", l.max_sup_distance, None));
            out.convergence.push(ConvergenceRow::new(
                "sup-distance",
                n,
                "exact-paths",
                l.exact_paths as f64,
                None,
            ));
        }
        let pts = |f: &dyn Fn(&TailBoundRow) -> f64| -> Vec<(f64, f64)> {
            self.levels
                .iter()
                .map(|l| (l.tail.truncation as f64, f(&l.tail)))
                .collect()
        };
        let tail = Chart::new(
            format!("Truncation tail, eta = {}", self.eta),
            "truncation n",
            "probability",
        )
        .with(Series::dots("empirical P(sup |N - N^n| >= eta)", pts(&|t| t.empirical)))
        .with(Series::dots("(mu/eta) sum P(tau_i <= T)", pts(&|t| t.bound)))
        .with(Series::dots("E sup / eta", pts(&|t| t.markov)));
        let mut comp = Chart::new("N and N^n along path 0", "t", "N_t");
        for (label, p) in &self.path0 {
            comp = comp.with(trajectory_series(label, p));
        }
        out.figures = vec![
            ("compensator".into(), comp.render()),
            ("tail-bound".into(), tail.render()),
        ];
        out.results.insert(cfg.scenario.name().into(), to_value(&self));
        out
    }
}

// -------------------------------------------------------- weak convergence

#[derive(Debug, Clone, Serialize)]
pub struct WeakConvergenceOutcome {
    pub feature_time: f64,
    pub target: String,
    pub eta: f64,
    pub rows: Vec<WeakConvergenceRow>,
}

/// Dyadic times `k 2^-level <= t`.
pub fn dyadic_times_up_to(level: u32, t: f64) -> Vec<f64> {
    let d = (1u64 << level) as f64;
    (0..=(1u64 << level))
        .map(|k| k as f64 / d)
        .take_while(|&u| u <= t + 1e-12)
        .collect()
}

/// `d_n` at `feature_time` for `f = clamp(B_target, -1, 1)` against the
/// dyadic discretisations of `B`.
pub fn weak_convergence(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<WeakConvergenceOutcome, RunError> {
    let grid = unit_grid(cfg)?;
    let b = timings.time("simulate", || brownian(cfg, &grid))?;
    let targets: Vec<f64> = at_stage("targets", b.values_at(cfg.target_time))?
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    let specs = cfg
        .levels
        .iter()
        .map(|&l| {
            at_stage(
                "sigma-field",
                SigmaFieldSpec::from_times(
                    format!("dyadic level {l}"),
                    cfg.feature_time,
                    dyadic_times_up_to(l, cfg.feature_time),
                    vec![],
                ),
            )
            .map(|s| (l, s))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let obs = Observation::base(&b);
    let rows = timings.time("regression", || {
        at_stage(
            "weak convergence",
            weak_convergence_report(&targets, &specs, &obs, cfg.eta, &cfg.regression_config()),
        )
    })?;
    Ok(WeakConvergenceOutcome {
        feature_time: cfg.feature_time,
        target: format!("clamp(B({}), -1, 1)", cfg.target_time),
        eta: cfg.eta,
        rows,
    })
}

impl WeakConvergenceOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let d: Vec<f64> = self.rows.iter().map(|r| r.d_n).collect();
        vec![
            Check::new(
                "d_n non-increasing in the level up to one inversion",
                non_increasing_up_to_one_inversion(&d),
                format!("d_n {d:?}"),
            ),
            Check::at_most(
                "d_n at the finest level",
                *d.last().unwrap_or(&f64::NAN),
                0.05,
                false,
                "",
            ),
        ]
    }

    pub fn output(self, cfg: &ScenarioConfig) -> ScenarioOutput {
        let mut out = ScenarioOutput {
            checks: self.checks(),
            ..Default::default()
        };
        for r in &self.rows {
            out.convergence
                .push(ConvergenceRow::new("d_n", r.level, "d_n", r.d_n, None));
            out.convergence.push(ConvergenceRow::new(
                "d_n",
                r.level,
                "cross-fitted-l1",
                r.cross_fitted_l1,
                None,
            ));
        }
        let chart = Chart::new(
            format!("Weak convergence at t = {}", self.feature_time),
            "dyadic level n",
            "d_n",
        )
        .with(Series::dots(
            "d_n",
            self.rows.iter().map(|r| (r.level as f64, r.d_n)).collect(),
        ))
        .reference(0.05, "0.05");
        out.figures = vec![("weak-convergence".into(), chart.render())];
        out.results.insert(cfg.scenario.name().into(), to_value(&self));
        out
    }
}

// ----------------------------------------------------------- stopping time

#[derive(Debug, Clone, Serialize)]
pub struct StoppingTimeRow {
    pub level: u32,
    /// Fraction of paths with `|tau_m - tau| > 2^-passage_grid_level`.
    pub mismatch: f64,
    pub stderr: f64,
    /// Fraction with `tau_m == tau`.
    pub exact: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoppingTimeOutcome {
    pub passage_level: f64,
    pub passage_grid_level: u32,
    pub tolerance: f64,
    pub rows: Vec<StoppingTimeRow>,
}

/// First time on the level-`g` dyadic grid at which the path exceeds
/// `level`, capped at 1.
pub fn dyadic_first_passage(p: &Path, level: f64, g: u32) -> filtex_core::Result<f64> {
    for u in dyadic_times_up_to(g, 1.0).into_iter().skip(1) {
        if p.value_at(u)? > level {
            return Ok(u);
        }
    }
    Ok(1.0)
}

/// Level-`m` information at time `t`: the last observed value and the
/// running maximum of the earlier observations.
fn passage_spec(m: u32, t: f64) -> SigmaFieldSpec {
    let times = dyadic_times_up_to(m, t);
    SigmaFieldSpec::new(
        format!("level {m} at {t}"),
        t,
        vec!["last".into(), "earlier-max".into()],
        move |b, _| {
            let vals = times
                .iter()
                .map(|&u| b.value_at(u))
                .collect::<filtex_core::Result<Vec<f64>>>()?;
            let last = *vals.last().expect("time 0 is always observed");
            let earlier = vals[..vals.len() - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(vec![last, if earlier.is_finite() { earlier } else { last }])
        },
    )
}

pub fn stopping_time(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<StoppingTimeOutcome, RunError> {
    let grid = unit_grid(cfg)?;
    let b = timings.time("simulate", || brownian(cfg, &grid))?;
    let g = cfg.passage_grid_level;
    let tau = at_stage(
        "first passage",
        b.paths()
            .iter()
            .map(|p| dyadic_first_passage(p, cfg.passage_level, g))
            .collect::<filtex_core::Result<Vec<_>>>(),
    )?;
    let times: Vec<f64> = dyadic_times_up_to(g, 1.0).into_iter().skip(1).collect();
    let tolerance = 1.0 / (1u64 << g) as f64;
    let obs = Observation::base(&b);
    let mut rows = Vec::new();
    for &m in &cfg.levels {
        let specs: Vec<SigmaFieldSpec> = times.iter().map(|&t| passage_spec(m, t)).collect();
        let approx = timings.time("regression", || {
            at_stage(
                "stopping time",
                approximate_stopping_time(&tau, &times, &specs, &obs, &cfg.regression_config()),
            )
        })?;
        let miss: Vec<f64> = approx
            .tau_m
            .iter()
            .zip(&tau)
            .map(|(a, t)| if (a - t).abs() > tolerance + 1e-12 { 1.0 } else { 0.0 })
            .collect();
        let exact = approx
            .tau_m
            .iter()
            .zip(&tau)
            .filter(|(a, t)| (*a - *t).abs() < 1e-12)
            .count() as f64
            / tau.len() as f64;
        let (mismatch, stderr) = mean_stderr(&miss);
        rows.push(StoppingTimeRow {
            level: m,
            mismatch,
            stderr,
            exact,
        });
    }
    Ok(StoppingTimeOutcome {
        passage_level: cfg.passage_level,
        passage_grid_level: g,
        tolerance,
        rows,
    })
}

impl StoppingTimeOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let p: Vec<f64> = self.rows.iter().map(|r| r.mismatch).collect();
        vec![
            Check::at_most(
                "P(|tau_m - tau| > tolerance) at the finest level",
                *p.last().unwrap_or(&f64::NAN),
                0.1,
                true,
                "",
            ),
            Check::new(
                "mismatch non-increasing in m up to one inversion",
                non_increasing_up_to_one_inversion(&p),
                format!("mismatch {p:?}"),
            ),
        ]
    }

    pub fn output(self, cfg: &ScenarioConfig) -> ScenarioOutput {
        let mut out = ScenarioOutput {
            checks: self.checks(),
            ..Default::default()
        };
        for r in &self.rows {
            out.convergence.push(ConvergenceRow::new(
                "stopping-time",
                r.level,
                "mismatch",
                r.mismatch,
                Some(r.stderr),
            ));
            out.convergence
                .push(ConvergenceRow::new("stopping-time", r.level, "exact", r.exact, None));
        }
        let chart = Chart::new(
            "Stopping-time approximation",
            "feature level m",
            "P(|tau_m - tau| > 2^-g)",
        )
        .with(Series::dots(
            "mismatch",
            self.rows.iter().map(|r| (r.level as f64, r.mismatch)).collect(),
        ))
        .reference(0.1, "0.1");
        out.figures = vec![("stopping-time".into(), chart.render())];
        out.results.insert(cfg.scenario.name().into(), to_value(&self));
        out
    }
}
