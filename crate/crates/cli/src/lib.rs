//! Scenario runner: simulate an ensemble, build the compensators, run the
//! martingale and convergence diagnostics, and persist CSV tables, SVG
//! figures and a JSON report.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod scenarios;
pub mod svg;
pub mod tables;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use config::{Overrides, RawConfig, Scenario, ScenarioConfig};
use tables::{CompensatorRow, ConvergenceRow, MgtestRow};

pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: String, detail: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } | RunError::Io(_) => 1,
        }
    }
}

/// Attach the runner stage to a library error. Invalid arguments reaching
/// the library are consequences of the configuration.
pub fn at_stage<T>(stage: &str, r: filtex_core::Result<T>) -> Result<T, RunError> {
    use filtex_core::Error as E;
    r.map_err(|e| match e {
        E::InvalidArgument(m) => RunError::Config(format!("{stage}: {m}")),
        E::DomainViolation(m) => RunError::Numerical {
            stage: stage.into(),
            detail: m,
        },
        E::NumericalFailure { stage: inner, detail } => RunError::Numerical {
            stage: format!("{stage} ({inner})"),
            detail,
        },
    })
}

/// A pass/fail statement about a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            observed: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    /// `observed <= threshold` (or `<` when `strict`).
    pub fn at_most(
        name: impl Into<String>,
        observed: f64,
        threshold: f64,
        strict: bool,
        detail: impl Into<String>,
    ) -> Self {
        let passed = if strict {
            observed < threshold
        } else {
            observed <= threshold
        };
        Self {
            name: name.into(),
            passed,
            observed: Some(observed),
            threshold: Some(threshold),
            detail: detail.into(),
        }
    }
}

/// Wall-clock seconds per stage, accumulated over repeated stages.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(stage.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }
}

/// Everything a scenario produces before it is written to disk.
#[derive(Debug, Default)]
pub struct ScenarioOutput {
    pub results: serde_json::Map<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub compensator: Vec<CompensatorRow>,
    pub mgtest: Vec<MgtestRow>,
    pub convergence: Vec<ConvergenceRow>,
    /// `(file stem, svg text)`.
    pub figures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config: ScenarioConfig,
    pub results: serde_json::Map<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub verdict: String,
    pub timings: Timings,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Run the configured scenario and write `report.json`, the three CSV
/// tables and `figures/*.svg` under `cfg.out`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let start = Instant::now();
    let output = scenarios::run(cfg, &mut timings)?;
    timings.0.insert("total".into(), start.elapsed().as_secs_f64());
    write_outputs(cfg, output, timings)
}

fn write_outputs(cfg: &ScenarioConfig, output: ScenarioOutput, timings: Timings) -> Result<RunReport, RunError> {
    let out = &cfg.out;
    let figures_dir = out.join("figures");
    std::fs::create_dir_all(&figures_dir).map_err(|e| io_err(&figures_dir, e))?;
    let mut artifacts = Vec::new();
    let mut record = |name: &str| -> PathBuf {
        artifacts.push(name.to_string());
        out.join(name)
    };
    tables::write_csv(
        &record("compensator.csv"),
        &tables::COMPENSATOR_HEADER,
        &output.compensator,
    )?;
    tables::write_csv(&record("mgtest.csv"), &tables::MGTEST_HEADER, &output.mgtest)?;
    tables::write_csv(
        &record("convergence.csv"),
        &tables::CONVERGENCE_HEADER,
        &output.convergence,
    )?;
    for (stem, svg) in &output.figures {
        let p = record(&format!("figures/{stem}.svg"));
        std::fs::write(&p, svg).map_err(|e| io_err(&p, e))?;
    }
    let report_path = record("report.json");
    let passed = output.checks.iter().all(|c| c.passed);
    let report = RunReport {
        tool: "filtex".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: cfg.scenario.name().into(),
        config: cfg.clone(),
        results: output.results,
        checks: output.checks,
        verdict: if passed { "pass" } else { "fail" }.into(),
        timings,
        artifacts,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| RunError::Io(format!("report serialisation: {e}")))?;
    std::fs::write(&report_path, text + "\n").map_err(|e| io_err(&report_path, e))?;
    Ok(report)
}
