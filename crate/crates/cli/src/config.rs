//! Flat TOML scenario configuration with per-scenario defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use filtex_core::density::HVariant;
use filtex_core::regress::{Basis, RegressionConfig};
use filtex_core::SdeCoefficients;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    BrownianReversal,
    DiffusionReversal,
    NoisyTerminal,
    PointProcess,
    WeakConvergence,
    StoppingTime,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::BrownianReversal,
        Scenario::DiffusionReversal,
        Scenario::NoisyTerminal,
        Scenario::PointProcess,
        Scenario::WeakConvergence,
        Scenario::StoppingTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::BrownianReversal => "brownian-reversal",
            Scenario::DiffusionReversal => "diffusion-reversal",
            Scenario::NoisyTerminal => "noisy-terminal",
            Scenario::PointProcess => "point-process",
            Scenario::WeakConvergence => "weak-convergence",
            Scenario::StoppingTime => "stopping-time",
        }
    }

    pub fn is_reversal(self) -> bool {
        matches!(self, Scenario::BrownianReversal | Scenario::DiffusionReversal)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Scenario::ALL.iter().map(|sc| sc.name()).collect();
            RunError::Config(format!("unknown scenario '{s}' (known: {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionChoice {
    Knn,
    LeastSquares,
}

/// The config file as written: every key optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub scenario: Option<String>,
    pub paths: Option<usize>,
    pub grid_steps: Option<usize>,
    pub levels: Option<Vec<u32>>,
    pub seed: Option<u64>,
    pub t_max: Option<f64>,
    pub coefficients: Option<String>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub lag_steps: Option<usize>,
    pub test_times: Option<Vec<f64>>,
    pub qv_tolerance: Option<f64>,
    pub eta: Option<f64>,
    pub noise_levels: Option<Vec<u64>>,
    pub truncations: Option<Vec<usize>>,
    pub inner_samples: Option<usize>,
    pub bridge_nodes: Option<usize>,
    pub h_variant: Option<String>,
    pub regression: Option<RegressionChoice>,
    pub knn_k: Option<usize>,
    pub sup_paths: Option<usize>,
    pub feature_time: Option<f64>,
    pub target_time: Option<f64>,
    pub passage_level: Option<f64>,
    pub passage_grid_level: Option<u32>,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub levels: Option<Vec<u32>>,
    pub out: Option<PathBuf>,
    pub t_max: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, raw: &mut RawConfig) {
        if let Some(s) = &self.scenario {
            raw.scenario = Some(s.clone());
        }
        if let Some(v) = self.paths {
            raw.paths = Some(v);
        }
        if let Some(v) = self.seed {
            raw.seed = Some(v);
        }
        if let Some(v) = &self.levels {
            raw.levels = Some(v.clone());
        }
        if let Some(v) = &self.out {
            raw.out = Some(v.clone());
        }
        if let Some(v) = self.t_max {
            raw.t_max = Some(v);
        }
    }
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub paths: usize,
    pub grid_steps: usize,
    pub levels: Vec<u32>,
    pub seed: u64,
    pub t_max: f64,
    pub coefficients: String,
    pub out: PathBuf,
    pub alpha: f64,
    pub lag_steps: usize,
    pub test_times: Vec<f64>,
    pub qv_tolerance: f64,
    pub eta: f64,
    pub noise_levels: Vec<u64>,
    pub truncations: Vec<usize>,
    pub inner_samples: usize,
    pub bridge_nodes: usize,
    pub h_variant: String,
    pub regression: RegressionChoice,
    pub knn_k: Option<usize>,
    pub sup_paths: usize,
    pub feature_time: f64,
    pub target_time: f64,
    pub passage_level: f64,
    pub passage_grid_level: u32,
}

fn bad(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

impl ScenarioConfig {
    /// Defaults for `scenario` at the desk scale.
    pub fn defaults(scenario: Scenario) -> Self {
        let (paths, levels, t_max, test_times, eta, regression) = match scenario {
            Scenario::BrownianReversal => (
                10_000,
                vec![2, 3, 4, 5],
                0.4,
                vec![0.05, 0.15, 0.25, 0.35],
                0.1,
                RegressionChoice::Knn,
            ),
            Scenario::DiffusionReversal => (
                2_000,
                vec![2, 3, 4, 5],
                0.4,
                vec![0.05, 0.15, 0.25, 0.35],
                0.1,
                RegressionChoice::Knn,
            ),
            Scenario::NoisyTerminal => (
                10_000,
                vec![],
                0.9,
                vec![0.1, 0.3, 0.5, 0.7, 0.85],
                0.1,
                RegressionChoice::Knn,
            ),
            Scenario::PointProcess => (10_000, vec![], 1.0, vec![], 0.5, RegressionChoice::Knn),
            Scenario::WeakConvergence => (
                10_000,
                vec![1, 2, 3, 4, 5],
                1.0,
                vec![],
                0.1,
                RegressionChoice::LeastSquares,
            ),
            Scenario::StoppingTime => (10_000, vec![1, 2, 3, 4], 1.0, vec![], 0.1, RegressionChoice::Knn),
        };
        Self {
            scenario,
            paths,
            grid_steps: 1024,
            levels,
            seed: 42,
            t_max,
            coefficients: if scenario == Scenario::DiffusionReversal {
                "ou"
            } else {
                "brownian"
            }
            .into(),
            out: PathBuf::from(format!("out/{scenario}")),
            alpha: 0.01,
            lag_steps: 16,
            test_times,
            qv_tolerance: 0.02,
            eta,
            noise_levels: vec![4, 64, 10_000],
            truncations: vec![5, 10, 20],
            inner_samples: 100,
            bridge_nodes: 32,
            h_variant: "standard".into(),
            regression,
            // the stopping-time indicators are sharp functions of the features
            knn_k: (scenario == Scenario::StoppingTime).then_some(10),
            sup_paths: 100,
            feature_time: 0.5,
            target_time: 0.3,
            passage_level: 0.5,
            passage_grid_level: 4,
        }
    }

    /// Resolve a raw file (after overrides) against the scenario defaults and
    /// validate it.
    pub fn resolve(raw: RawConfig) -> Result<Self, RunError> {
        let scenario: Scenario = raw
            .scenario
            .as_deref()
            .ok_or_else(|| bad("no scenario given (set `scenario` or pass --scenario)"))?
            .parse()?;
        let d = Self::defaults(scenario);
        let cfg = Self {
            scenario,
            paths: raw.paths.unwrap_or(d.paths),
            grid_steps: raw.grid_steps.unwrap_or(d.grid_steps),
            levels: raw.levels.unwrap_or(d.levels),
            seed: raw.seed.unwrap_or(d.seed),
            t_max: raw.t_max.unwrap_or(d.t_max),
            coefficients: raw.coefficients.unwrap_or(d.coefficients),
            out: raw.out.unwrap_or(d.out),
            alpha: raw.alpha.unwrap_or(d.alpha),
            lag_steps: raw.lag_steps.unwrap_or(d.lag_steps),
            test_times: raw.test_times.unwrap_or(d.test_times),
            qv_tolerance: raw.qv_tolerance.unwrap_or(d.qv_tolerance),
            eta: raw.eta.unwrap_or(d.eta),
            noise_levels: raw.noise_levels.unwrap_or(d.noise_levels),
            truncations: raw.truncations.unwrap_or(d.truncations),
            inner_samples: raw.inner_samples.unwrap_or(d.inner_samples),
            bridge_nodes: raw.bridge_nodes.unwrap_or(d.bridge_nodes),
            h_variant: raw.h_variant.unwrap_or(d.h_variant),
            regression: raw.regression.unwrap_or(d.regression),
            knn_k: raw.knn_k.or(d.knn_k),
            sup_paths: raw.sup_paths.unwrap_or(d.sup_paths),
            feature_time: raw.feature_time.unwrap_or(d.feature_time),
            target_time: raw.target_time.unwrap_or(d.target_time),
            passage_level: raw.passage_level.unwrap_or(d.passage_level),
            passage_grid_level: raw.passage_grid_level.unwrap_or(d.passage_grid_level),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self, RunError> {
        let mut raw = RawConfig::load(path)?;
        overrides.apply(&mut raw);
        Self::resolve(raw)
    }

    /// Lag `h` of the orthogonality test as a time span.
    pub fn lag(&self) -> f64 {
        self.lag_steps as f64 / self.grid_steps as f64
    }

    pub fn h_variant(&self) -> Result<HVariant, RunError> {
        match self.h_variant.as_str() {
            "standard" => Ok(HVariant::Standard),
            "as-printed" => Ok(HVariant::AsPrinted),
            other => Err(bad(format!(
                "h_variant must be 'standard' or 'as-printed', got '{other}'"
            ))),
        }
    }

    pub fn coefficients(&self) -> Result<SdeCoefficients, RunError> {
        SdeCoefficients::preset(&self.coefficients).map_err(|e| bad(format!("coefficients: {e}")))
    }

    pub fn regression_config(&self) -> RegressionConfig {
        match self.regression {
            RegressionChoice::Knn => RegressionConfig::knn(self.knn_k),
            RegressionChoice::LeastSquares => RegressionConfig::least_squares(Basis::Affine),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.paths == 0 || self.grid_steps == 0 || self.lag_steps == 0 || self.sup_paths == 0 {
            return Err(bad("paths, grid_steps, lag_steps and sup_paths must be positive"));
        }
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return Err(bad(format!("t_max = {} must lie in (0, 1]", self.t_max)));
        }
        if self.scenario.is_reversal() && self.t_max >= 0.5 {
            return Err(bad(format!(
                "{} needs t_max < T/2 = 0.5, got {}",
                self.scenario, self.t_max
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.eta > 0.0) || !(self.qv_tolerance >= 0.0) {
            return Err(bad("eta must be positive and qv_tolerance non-negative"));
        }
        self.h_variant()?;
        if self.levels.iter().any(|&l| l > 12) {
            return Err(bad("subdivision levels above 12 are not supported"));
        }
        match self.scenario {
            Scenario::BrownianReversal | Scenario::DiffusionReversal | Scenario::NoisyTerminal => {
                self.validate_martingale_tests()?;
                if self.scenario.is_reversal() {
                    if self.levels.is_empty() {
                        return Err(bad("at least one subdivision level is required"));
                    }
                    let step = 1.0 / self.grid_steps as f64;
                    if let Some(&l) = self.levels.iter().find(|&&l| (self.t_max / (1u64 << l) as f64) < step) {
                        return Err(bad(format!(
                            "level {l} subdivides [0, {}] more finely than the grid step {step}",
                            self.t_max
                        )));
                    }
                    if self.sup_paths < 100 || self.sup_paths > self.paths {
                        return Err(bad("sup_paths must lie between 100 and paths"));
                    }
                    self.coefficients()?;
                }
                if self.scenario == Scenario::DiffusionReversal && (self.inner_samples < 100 || self.bridge_nodes < 2) {
                    return Err(bad("inner_samples must be >= 100 and bridge_nodes >= 2"));
                }
                if self.scenario == Scenario::NoisyTerminal
                    && (self.noise_levels.is_empty() || self.noise_levels.contains(&0))
                {
                    return Err(bad("noise_levels must be a non-empty list of positive integers"));
                }
            }
            Scenario::PointProcess => {
                if self.truncations.is_empty() {
                    return Err(bad("truncations must be non-empty"));
                }
            }
            Scenario::WeakConvergence => {
                if self.levels.len() < 2 {
                    return Err(bad("weak-convergence needs at least two levels"));
                }
                if self.paths < 500 {
                    return Err(bad("weak-convergence needs at least 500 paths"));
                }
                if !(self.feature_time > 0.0
                    && self.feature_time <= 1.0
                    && self.target_time >= 0.0
                    && self.target_time <= self.feature_time)
                {
                    return Err(bad("need 0 <= target_time <= feature_time <= 1"));
                }
            }
            Scenario::StoppingTime => {
                if self.levels.is_empty() {
                    return Err(bad("stopping-time needs at least one level"));
                }
                if self.paths < 500 {
                    return Err(bad("stopping-time needs at least 500 paths"));
                }
                if self.passage_grid_level > 10 || (1usize << self.passage_grid_level) > self.grid_steps {
                    return Err(bad("passage_grid_level must be at most log2(grid_steps)"));
                }
            }
        }
        Ok(())
    }

    fn validate_martingale_tests(&self) -> Result<(), RunError> {
        if self.paths < 2000 {
            return Err(bad(format!(
                "{} runs martingale tests, which need at least 2000 paths (got {})",
                self.scenario, self.paths
            )));
        }
        if self.grid_steps < 1024 {
            return Err(bad("quadratic-variation checks need grid_steps >= 1024"));
        }
        if self.test_times.is_empty() {
            return Err(bad("test_times must be non-empty"));
        }
        let h = self.lag();
        let lookback = if self.scenario == Scenario::NoisyTerminal {
            2.0 * h
        } else {
            h
        };
        if let Some(t) = self
            .test_times
            .iter()
            .find(|&&t| t - lookback < -1e-12 || t + h > self.t_max + 1e-12)
        {
            return Err(bad(format!(
                "test time {t} needs [{t} - {lookback}, {t} + {h}] inside [0, t_max = {}]",
                self.t_max
            )));
        }
        Ok(())
    }
}
