//! Experiment runner: reads a JSON config, runs one sweep and writes
//! `results.csv`, `report.json` and SVG plots.

// Negated comparisons are deliberate: they treat NaN as failing.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod experiments;
pub mod pool;
pub mod stats;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

pub use config::ExperimentConfig;
pub use experiments::{Check, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checks failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Run(#[from] genlab::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
    /// Force a single worker.
    pub deterministic: bool,
    /// Output directory overriding the config's.
    pub output_dir: Option<PathBuf>,
}

pub struct RunSummary {
    pub output_dir: PathBuf,
    pub checks: Vec<Check>,
}

/// Reads, parses and validates a config file. A missing or unreadable file
/// is a config error.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate(&base)?;
    Ok((cfg, base))
}

pub fn validate(path: &Path) -> Result<ExperimentConfig, CliError> {
    load_config(path).map(|(cfg, _)| cfg)
}

fn threads(opts: &RunOptions) -> usize {
    if opts.deterministic {
        1
    } else if opts.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        opts.threads
    }
}

pub fn results_csv(outcome: &Outcome, hash: &str, seed: u64) -> String {
    let mut s = outcome.header.join(",");
    s.push('\n');
    for row in &outcome.rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s.push_str(&format!("# config_hash={hash} seed={seed}\n"));
    s
}

pub fn run(path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let (mut cfg, base) = load_config(path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let out = match (&opts.output_dir, &cfg.output_dir) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => base.join(dir),
        (None, None) => base.join("genlab-out"),
    };
    let ctx = experiments::Context { base, seed: cfg.seed, threads: threads(opts) };
    let outcome = experiments::run(&cfg.experiment, &ctx)?;
    let hash = cfg.hash();

    fs::create_dir_all(&out).map_err(io(&out))?;
    let csv_path = out.join("results.csv");
    fs::write(&csv_path, results_csv(&outcome, &hash, cfg.seed)).map_err(io(&csv_path))?;
    let report = json!({
        "experiment": cfg.experiment.name(),
        "config_hash": hash,
        "seed": cfg.seed,
        "rng": genlab::Rng::new(0).algorithm(),
        "config": cfg.experiment,
        "summary": outcome.summary,
        "checks": outcome.checks,
        "all_checks_passed": outcome.checks.iter().all(|c| c.passed),
    });
    let report_path = out.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    fs::write(&report_path, text).map_err(io(&report_path))?;
    for (name, plot) in &outcome.plots {
        let p = out.join(format!("{name}.svg"));
        fs::write(&p, svg::plot_svg(plot)).map_err(io(&p))?;
    }

    let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if cfg.fail_on_check && !failed.is_empty() {
        return Err(CliError::CheckFailed(failed.join(", ")));
    }
    Ok(RunSummary { output_dir: out, checks: outcome.checks })
}

/// Human-readable summary of a finished run directory.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut s = format!(
        "experiment {}\nseed {}\nconfig_hash {}\n",
        v["experiment"].as_str().unwrap_or("?"),
        v["seed"],
        v["config_hash"].as_str().unwrap_or("?")
    );
    if let Some(checks) = v["checks"].as_array() {
        for c in checks {
            let mark = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
            s.push_str(&format!("{mark} {}: {}\n", c["name"].as_str().unwrap_or("?"), c["detail"].as_str().unwrap_or("")));
        }
    }
    s.push_str(&format!("summary {}\n", serde_json::to_string_pretty(&v["summary"]).unwrap_or_default()));
    Ok(s)
}
