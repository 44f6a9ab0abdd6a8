use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use filtex_cli::{run_scenario, Overrides, RawConfig, RunError, ScenarioConfig};

/// Run a filtration-enlargement experiment and write its tables, figures
/// and report.
#[derive(Debug, Parser)]
#[command(name = "filtex", version)]
struct Cli {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name (overrides the file).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subdivision levels, e.g. 2,3,4,5.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Worker threads for ensemble operations (outputs do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve(cli: &Cli) -> Result<ScenarioConfig, RunError> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    Overrides {
        scenario: cli.scenario.clone(),
        paths: cli.paths,
        seed: cli.seed,
        levels: cli.levels.clone(),
        out: cli.out.clone(),
        t_max: cli.t_max,
    }
    .apply(&mut raw);
    ScenarioConfig::resolve(raw)
}

fn execute(cli: &Cli) -> Result<bool, RunError> {
    let cfg = resolve(cli)?;
    let run = || run_scenario(&cfg);
    let report = match cli.workers {
        Some(0) => return Err(RunError::Config("--workers must be positive".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| RunError::Config(format!("cannot start {w} workers: {e}")))?
            .install(run)?,
        None => run()?,
    };
    for c in &report.checks {
        println!("[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    println!(
        "{}: {} ({})",
        report.scenario,
        report.verdict,
        cfg.out.join("report.json").display()
    );
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("filtex: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
