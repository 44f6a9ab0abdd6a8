//! Fixed-column CSV tables.
//!
//! `compensator.csv`: `level,t,A_value,tv_running`. One trajectory (path 0)
//! per level; `level` is a dyadic level, `limit`, `n=<noise index>`,
//! `bridge`, or for the point process `full` / `n=<truncation>` (then
//! `A_value` holds `N_t` or `N^n_t`).
//!
//! `mgtest.csv`: `test,process,row,t,term,estimate,stderr,t_stat,p_value,p_adjusted,verdict`.
//! `row` is `coefficient` (one basis term at one time), `time` (the
//! per-time summary: `estimate` is the largest |t|, `p_value` the smallest
//! adjusted p) or `qv` (`estimate` is the mean realised quadratic
//! variation, `t_stat` its relative deviation from `t`).
//!
//! `convergence.csv`: `table,level,statistic,value,stderr`, one row per
//! reported number; `table` names the diagnostic and `level` the index it
//! is tabulated against (level, lag, noise index or truncation).

use std::path::Path;

use serde::Serialize;

use filtex_core::mgtest::{MartingaleTestReport, Verdict};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompensatorRow {
    pub level: String,
    pub t: f64,
    #[serde(rename = "A_value")]
    pub a_value: f64,
    pub tv_running: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgtestRow {
    pub test: String,
    pub process: String,
    pub row: String,
    pub t: f64,
    pub term: String,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub table: String,
    pub level: String,
    pub statistic: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl ConvergenceRow {
    pub fn new(table: &str, level: impl ToString, statistic: &str, value: f64, stderr: Option<f64>) -> Self {
        Self {
            table: table.into(),
            level: level.to_string(),
            statistic: statistic.into(),
            value,
            stderr,
        }
    }
}

pub const COMPENSATOR_HEADER: [&str; 4] = ["level", "t", "A_value", "tv_running"];
pub const MGTEST_HEADER: [&str; 11] = [
    "test",
    "process",
    "row",
    "t",
    "term",
    "estimate",
    "stderr",
    "t_stat",
    "p_value",
    "p_adjusted",
    "verdict",
];
pub const CONVERGENCE_HEADER: [&str; 5] = ["table", "level", "statistic", "value", "stderr"];

fn verdict_label(pass: bool) -> String {
    if pass { "pass" } else { "fail" }.into()
}

/// Rows for one martingale test report.
pub fn mgtest_rows(process: &str, report: &MartingaleTestReport) -> Vec<MgtestRow> {
    let test = report.config.test.clone();
    let mut rows = Vec::new();
    if test == "quadratic-variation" {
        let s = &report.per_time[0];
        rows.push(MgtestRow {
            test,
            process: process.into(),
            row: "qv".into(),
            t: s.t,
            term: String::new(),
            estimate: report.estimate,
            stderr: report.estimate_stderr,
            t_stat: Some(s.statistic),
            p_value: Some(s.p_value),
            p_adjusted: None,
            verdict: verdict_label(report.verdict == Verdict::Pass),
        });
        return rows;
    }
    let alpha = report.config.alpha;
    for s in &report.per_time {
        rows.push(MgtestRow {
            test: test.clone(),
            process: process.into(),
            row: "time".into(),
            t: s.t,
            term: String::new(),
            estimate: Some(s.statistic),
            stderr: None,
            t_stat: None,
            p_value: Some(s.p_value),
            p_adjusted: None,
            verdict: verdict_label(s.p_value >= alpha),
        });
    }
    for c in &report.coefficients {
        rows.push(MgtestRow {
            test: test.clone(),
            process: process.into(),
            row: "coefficient".into(),
            t: c.t,
            term: c.term.clone(),
            estimate: Some(c.estimate),
            stderr: Some(c.stderr),
            t_stat: Some(c.t_stat),
            p_value: Some(c.p_value),
            p_adjusted: Some(c.p_adjusted),
            verdict: verdict_label(c.p_adjusted >= alpha),
        });
    }
    rows
}

/// Write `rows` under a fixed header; an empty table still gets its header.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), RunError> {
    let io = |e: csv::Error| RunError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_and_blank_optionals() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_csv(
            &p,
            &CONVERGENCE_HEADER,
            &[ConvergenceRow::new("d_n", 3, "d_n", 0.25, None)],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "table,level,statistic,value,stderr\nd_n,3,d_n,0.25,\n"
        );
        let q = dir.path().join("e.csv");
        write_csv::<CompensatorRow>(&q, &COMPENSATOR_HEADER, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&q).unwrap(), "level,t,A_value,tv_running\n");
    }
}
