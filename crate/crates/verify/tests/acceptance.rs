//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run a subset with `cargo test -p filtex-verify --test acceptance -- 3 7`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use filtex_cli::config::{Scenario, ScenarioConfig};
use filtex_cli::scenarios::{self, non_increasing_up_to_one_inversion};
use filtex_cli::{run_scenario, Timings};
use filtex_core::converge::{Observation, SigmaFieldSpec};
use filtex_core::density::{
    brownian_phi, estimate_phi, gaussian_density, ou_exact_density, HVariant, ScoreFunction, ZmirouConfig, ZmirouKernel,
};
use filtex_core::mgtest::{increment_orthogonality_test, OrthogonalityConfig};
use filtex_core::regress::ols;
use filtex_core::simulate::brownian_ensemble;
use filtex_core::{make_uniform_grid, PathEnsemble, RngContract, SdeCoefficients};

type Outcome = Result<(bool, String), String>;

fn brownian_on(steps: usize, seed: u64, paths: usize) -> PathEnsemble {
    let grid = Arc::new(make_uniform_grid(1.0, steps).unwrap());
    brownian_ensemble(&grid, RngContract::new(seed), paths).unwrap()
}

fn c1_to_c3_run() -> Result<scenarios::ReversalOutcome, String> {
    let mut cfg = ScenarioConfig::defaults(Scenario::BrownianReversal);
    cfg.levels = vec![2, 3, 4, 5, 6];
    scenarios::reversal(&cfg, &mut Timings::default()).map_err(|e| e.to_string())
}

fn min_p(r: &filtex_core::mgtest::MartingaleTestReport) -> f64 {
    r.per_time.iter().map(|s| s.p_value).fold(1.0, f64::min)
}

fn criterion_1(r: &scenarios::ReversalOutcome) -> Outcome {
    let qv = r.qv.estimate.ok_or("qv estimate missing")?;
    let rel = (qv - 0.4).abs() / 0.4;
    let ok = r.b_minus_a.passed() && !r.raw_b.passed() && rel <= 0.02;
    Ok((
        ok,
        format!(
            "B - A min adj p = {:.3}, raw B min adj p = {:.2e} (alpha 0.01); mean qv(0.4) = {qv:.4}, rel dev {rel:.4} (tol 0.02)",
            min_p(&r.b_minus_a),
            min_p(&r.raw_b)
        ),
    ))
}

fn criterion_2(r: &scenarios::ReversalOutcome) -> Outcome {
    let means: Vec<f64> = r.sup_error.iter().map(|s| s.mean).collect();
    let ratio = r.median_successive_ratio.ok_or("no sup-error ratios")?;
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    Ok((
        decreasing && ratio < 0.9 && r.sup_error_paths == 100,
        format!(
            "{} paths, levels 2..6 mean sup error {:?}, median ratio {ratio:.3} (< 0.9)",
            r.sup_error_paths,
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
        ),
    ))
}

fn criterion_3(r: &scenarios::ReversalOutcome) -> Outcome {
    // phi on a grid where the lags are exact.
    let x = brownian_on(1000, 7, 10_000);
    let times = x.grid().times().to_vec();
    let mut ok = true;
    let mut parts = Vec::new();
    for (lag, steps) in [(0.05, 50), (0.1, 100), (0.25, 250)] {
        let (est, se) =
            estimate_phi(&ScoreFunction::gaussian(), &x, times[1000 - steps], 1.0).map_err(|e| e.to_string())?;
        let oracle = brownian_phi(lag);
        ok &= (est - oracle).abs() <= 3.0 * se;
        parts.push(format!("phi({lag}) = {est:.4} +- {se:.4} vs {oracle:.4}"));
    }
    let bound = 2.0 * (2.0 / PI).sqrt();
    for row in &r.integrability.rows {
        ok &= row.estimate <= bound + 3.0 * row.stderr;
    }
    let worst = r
        .integrability
        .rows
        .iter()
        .map(|row| row.estimate)
        .fold(f64::NEG_INFINITY, f64::max);
    let trend = r.integrability.trend.ok_or("no trend test")?;
    ok &= !(trend.slope > 0.0 && trend.p_value <= 0.01);
    parts.push(format!(
        "integrability max {worst:.4} vs {bound:.4} over levels 2..6; trend slope {:.2e} p = {:.3}",
        trend.slope, trend.p_value
    ));
    Ok((ok, parts.join("; ")))
}

fn criterion_4() -> Outcome {
    let b = brownian_on(1000, 11, 10_000);
    let (s, u) = (0.2, 0.8);
    let col = |t: f64| b.values_at(t).map_err(|e| e.to_string());
    let design = vec![vec![1.0; b.path_count()], col(s)?, col(u)?];
    let y = b.values_at(0.5).map_err(|e| e.to_string())?;
    let fit = ols(&design, &y).map_err(|e| e.to_string())?;
    let c = &fit.coefficients;
    let ok = c[0].abs() <= 0.02 && (c[1] - 0.5).abs() <= 0.02 && (c[2] - 0.5).abs() <= 0.02;
    Ok((
        ok,
        format!(
            "intercept {:.4}, B_0.2 {:.4}, B_0.8 {:.4} (targets 0, 0.5, 0.5; tol 0.02)",
            c[0], c[1], c[2]
        ),
    ))
}

fn criterion_5() -> Outcome {
    let heat = ZmirouKernel::new(&SdeCoefficients::brownian(), ZmirouConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = RngContract::new(5).stream(0);
    let mut identical = true;
    for &(t, x, y) in &[(0.25, 0.0, 0.0), (0.5, 0.3, -1.2), (1.0, -2.0, 0.7)] {
        let (d, _) = heat.density(t, x, y, &mut rng).map_err(|e| e.to_string())?;
        identical &= d.to_bits() == gaussian_density(t, x, y).map_err(|e| e.to_string())?.to_bits();
    }
    let ou = SdeCoefficients::ornstein_uhlenbeck();
    let mut matching = Vec::new();
    let mut worst = Vec::new();
    for variant in [HVariant::Standard, HVariant::AsPrinted] {
        let cfg = ZmirouConfig {
            inner_samples: 10_000,
            h_variant: variant,
            ..ZmirouConfig::default()
        };
        let k = ZmirouKernel::new(&ou, cfg).map_err(|e| e.to_string())?;
        let mut rng = RngContract::new(5).stream(1);
        let mut max_z = 0.0f64;
        for &t in &[0.25, 0.5] {
            for &y in &[0.0, 0.3] {
                let (d, se) = k.density(t, 0.0, y, &mut rng).map_err(|e| e.to_string())?;
                max_z = max_z.max((d - ou_exact_density(t, 0.0, y)).abs() / se);
            }
        }
        if max_z <= 3.0 {
            matching.push(variant.label());
        }
        worst.push(format!("{} max |z| = {max_z:.2}", variant.label()));
    }
    Ok((
        identical && !matching.is_empty(),
        format!(
            "Brownian bit-identical: {identical}; OU {}; matching variant(s): {}",
            worst.join(", "),
            if matching.is_empty() {
                "none".into()
            } else {
                matching.join(", ")
            }
        ),
    ))
}

fn criterion_6() -> Outcome {
    let cfg = ScenarioConfig::defaults(Scenario::NoisyTerminal);
    let r = scenarios::noisy_terminal(&cfg, &mut Timings::default()).map_err(|e| e.to_string())?;
    let passes = r.levels.iter().all(|l| l.test.passed());
    let d: Vec<f64> = r.levels.iter().map(|l| l.bridge_distance).collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let detail = r
        .levels
        .iter()
        .map(|l| {
            format!(
                "n={}: min adj p {:.3}, sup dist {:.4}",
                l.n,
                min_p(&l.test),
                l.bridge_distance
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok((passes && decreasing && r.levels.len() == 3, detail))
}

fn criterion_7() -> Outcome {
    let cfg = ScenarioConfig::defaults(Scenario::PointProcess);
    let r = scenarios::point_process(&cfg, &mut Timings::default()).map_err(|e| e.to_string())?;
    let ok = r
        .levels
        .iter()
        .all(|l| l.tail.empirical <= l.tail.bound + 3.0 * l.tail.stderr);
    let detail = r
        .levels
        .iter()
        .map(|l| {
            format!(
                "n={}: {:.4} +- {:.4} vs bound {:.4}",
                l.tail.truncation, l.tail.empirical, l.tail.stderr, l.tail.bound
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok((ok, detail))
}

fn criterion_8() -> Outcome {
    let cfg = ScenarioConfig::defaults(Scenario::WeakConvergence);
    let r = scenarios::weak_convergence(&cfg, &mut Timings::default()).map_err(|e| e.to_string())?;
    let d: Vec<f64> = r.rows.iter().map(|row| row.d_n).collect();
    let last = *d.last().ok_or("no levels")?;
    Ok((
        non_increasing_up_to_one_inversion(&d) && last <= 0.05,
        format!("d_n over levels 1..5 = {d:.4?} (finest must be <= 0.05)"),
    ))
}

fn criterion_9() -> Outcome {
    let cfg = ScenarioConfig::defaults(Scenario::StoppingTime);
    let r = scenarios::stopping_time(&cfg, &mut Timings::default()).map_err(|e| e.to_string())?;
    let p: Vec<f64> = r.rows.iter().map(|row| row.mismatch).collect();
    let last = *p.last().ok_or("no levels")?;
    Ok((
        non_increasing_up_to_one_inversion(&p) && last < 0.1,
        format!(
            "P(|tau_m - tau| > 1/16) over levels {:?} = {p:.4?} (finest < 0.1)",
            cfg.levels
        ),
    ))
}

fn criterion_10() -> Outcome {
    let alpha = 0.05;
    let h = 16.0 / 1024.0;
    let names: Vec<String> = ["dB3", "dB2", "dB1", "B"].iter().map(|s| s.to_string()).collect();
    let specs: Vec<SigmaFieldSpec> = [0.1, 0.2, 0.3]
        .iter()
        .map(|&t| {
            SigmaFieldSpec::new(format!("null@{t}"), t, names.clone(), move |b, _| {
                let v = |k: f64| b.value_at(t - k * h);
                Ok(vec![v(2.0)? - v(3.0)?, v(1.0)? - v(2.0)?, v(0.0)? - v(1.0)?, v(0.0)?])
            })
        })
        .collect();
    let ocfg = OrthogonalityConfig { h, alpha, t_max: 0.4 };
    let mut rejections = 0;
    for seed in 0..100u64 {
        let b = brownian_on(1024, 1000 + seed, 2000);
        let r = increment_orthogonality_test(&b, &Observation::base(&b), &specs, &ocfg).map_err(|e| e.to_string())?;
        rejections += usize::from(!r.passed());
    }
    let rate = rejections as f64 / 100.0;
    Ok((
        (alpha / 3.0..=3.0 * alpha).contains(&rate),
        format!(
            "{rejections}/100 seeds rejected, rate {rate:.3} in [{:.4}, {:.2}]",
            alpha / 3.0,
            3.0 * alpha
        ),
    ))
}

fn csv_bytes(dir: &Path) -> Vec<Vec<u8>> {
    ["compensator.csv", "mgtest.csv", "convergence.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap_or_default())
        .collect()
}

fn criterion_11() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (scenario, paths) in [
        (Scenario::BrownianReversal, 2000),
        (Scenario::NoisyTerminal, 2000),
        (Scenario::PointProcess, 2000),
        (Scenario::StoppingTime, 2000),
    ] {
        let mut outputs = Vec::new();
        for workers in [1, 1, 4] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut cfg = ScenarioConfig::defaults(scenario);
            cfg.paths = paths;
            cfg.out = dir.path().to_path_buf();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| e.to_string())?;
            pool.install(|| run_scenario(&cfg)).map_err(|e| e.to_string())?;
            outputs.push(csv_bytes(dir.path()));
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]) && outputs[0].iter().all(|b| !b.is_empty());
        ok &= same;
        detail.push(format!("{scenario}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    Ok((ok, format!("runs with 1, 1 and 4 workers; {}", detail.join(", "))))
}

fn report(n: usize, name: &str, outcome: Outcome) -> bool {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!(
        "criterion {n:>2} [{}] {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failed = Vec::new();
    let mut check = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if want(n) && !report(n, name, f()) {
            failed.push(n);
        }
    };
    if (1..=3).any(want) {
        let run = c1_to_c3_run();
        let shared = |pick: fn(&scenarios::ReversalOutcome) -> Outcome| -> Outcome {
            match &run {
                Ok(r) => pick(r),
                Err(e) => Err(e.clone()),
            }
        };
        check(1, "Brownian reversal decomposition", &|| shared(criterion_1));
        check(2, "compensator convergence", &|| shared(criterion_2));
        check(3, "phi bound and integrability", &|| shared(criterion_3));
    }
    check(4, "bridge identity by least squares", &criterion_4);
    check(5, "Zmirou density", &criterion_5);
    check(6, "noisy-terminal expansion", &criterion_6);
    check(7, "point-process tail bound", &criterion_7);
    check(8, "weak convergence of dyadic sigma-fields", &criterion_8);
    check(9, "stopping-time approximation", &criterion_9);
    check(10, "null calibration", &criterion_10);
    check(11, "reproducibility across runs and workers", &criterion_11);
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
