//! Experiment configuration: JSON schema, semantic validation and hashing.

use std::path::{Path, PathBuf};

use genlab::bounds::GammaClass;
use genlab::training::{StochasticityMode, TrainConfig};
use genlab::ucfail::TestSampler;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Exit with status 1 when a built-in check fails.
    #[serde(default)]
    pub fail_on_check: bool,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    NormsVsM(NormsVsM),
    BoundVsDepth(BoundVsDepth),
    MarginGap(MarginGap),
    Interp(Interp),
    UcfailLinear(UcfailLinear),
    UcfailHypersphere(UcfailHypersphere),
    UcfailExp(UcfailExp),
    GdeScatter(GdeScatter),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::NormsVsM(_) => "norms-vs-m",
            Experiment::BoundVsDepth(_) => "bound-vs-depth",
            Experiment::MarginGap(_) => "margin-gap",
            Experiment::Interp(_) => "interp",
            Experiment::UcfailLinear(_) => "ucfail-linear",
            Experiment::UcfailHypersphere(_) => "ucfail-hypersphere",
            Experiment::UcfailExp(_) => "ucfail-exp",
            Experiment::GdeScatter(_) => "gde-scatter",
        }
    }
}

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// IDX image and label files.
    Idx { images: PathBuf, labels: PathBuf },
    /// Inputs `N(0, I)` labelled by the argmax of a random ReLU teacher
    /// with the given hidden widths (none: a linear teacher).
    Teacher {
        dim: usize,
        classes: usize,
        #[serde(default)]
        hidden: Vec<usize>,
        size: usize,
    },
}

fn default_seeds() -> usize {
    1
}

fn default_delta() -> f64 {
    0.01
}

fn default_margin_gamma() -> f64 {
    10.0
}

fn default_pct() -> f64 {
    0.05
}

fn default_test_samples() -> usize {
    10_000
}

fn default_k() -> usize {
    2
}

fn default_band() -> f64 {
    0.3
}

fn default_bins() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsVsM {
    pub data: DataSource,
    pub ms: Vec<usize>,
    pub test_size: usize,
    #[serde(default)]
    pub label_noise: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Margin used by the baseline bounds and the data-dependent bound.
    #[serde(default = "default_margin_gamma")]
    pub margin_gamma: f64,
    /// Also evaluate the data-dependent bound (costly for wide nets).
    #[serde(default)]
    pub thesis_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundVsDepth {
    pub data: DataSource,
    pub m: usize,
    pub test_size: usize,
    pub depths: Vec<usize>,
    pub width: usize,
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub gamma_class: GammaClass,
    #[serde(default = "default_pct")]
    pub preact_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginGap {
    pub data: DataSource,
    pub ms: Vec<usize>,
    pub test_size: usize,
    #[serde(default)]
    pub label_noise: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interp {
    pub data: DataSource,
    pub m: usize,
    pub test_size: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub mode: StochasticityMode,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcfailLinear {
    pub m: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default)]
    pub sampler: TestSampler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcfailExp {
    pub m: usize,
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default)]
    pub sampler: TestSampler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcfailHypersphere {
    pub ms: Vec<usize>,
    pub dim: usize,
    pub r_in: f64,
    pub r_out: f64,
    pub width: usize,
    pub train: TrainConfig,
    pub trials: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdeScatter {
    pub data: DataSource,
    pub m: usize,
    pub test_size: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub modes: Vec<StochasticityMode>,
    pub pairs_per_mode: usize,
    /// Relative half-width of the `test_error ≈ disagreement` band.
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("experiment.{field}: {msg}"))
}

fn positive(field: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(field_error(field, "must be positive"));
    }
    Ok(())
}

fn nonempty_positive(field: &str, vs: &[usize]) -> Result<(), CliError> {
    if vs.is_empty() {
        return Err(field_error(field, "must be non-empty"));
    }
    if vs.contains(&0) {
        return Err(field_error(field, "entries must be positive"));
    }
    Ok(())
}

fn unit_interval(field: &str, v: f64, closed_low: bool) -> Result<(), CliError> {
    let ok = if closed_low { (0.0..1.0).contains(&v) } else { v > 0.0 && v < 1.0 };
    if !ok {
        return Err(field_error(field, format!("{v} outside {}0, 1)", if closed_low { "[" } else { "(" })));
    }
    Ok(())
}

fn train(field: &str, cfg: &TrainConfig) -> Result<(), CliError> {
    cfg.validate().map_err(|e| field_error(field, e))
}

fn data(field: &str, d: &DataSource, base: &Path) -> Result<(), CliError> {
    match d {
        DataSource::Idx { images, labels } => {
            for (name, p) in [("images", images), ("labels", labels)] {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(field_error(&format!("{field}.{name}"), format!("file {} does not exist", full.display())));
                }
            }
        }
        DataSource::Teacher { dim, classes, hidden, size } => {
            positive(&format!("{field}.dim"), *dim)?;
            if *classes < 2 {
                return Err(field_error(&format!("{field}.classes"), "need at least 2 classes"));
            }
            if hidden.contains(&0) {
                return Err(field_error(&format!("{field}.hidden"), "entries must be positive"));
            }
            positive(&format!("{field}.size"), *size)?;
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            let msg = msg.strip_suffix(&suffix).unwrap_or(&msg);
            CliError::Config(format!("line {} column {}: {msg}", e.line(), e.column()))
        })
    }

    /// Checks ranges and that referenced files exist relative to `base`.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        match &self.experiment {
            Experiment::NormsVsM(p) => {
                data("data", &p.data, base)?;
                nonempty_positive("ms", &p.ms)?;
                positive("test_size", p.test_size)?;
                unit_interval("label_noise", p.label_noise, true)?;
                nonempty_positive("hidden", &p.hidden)?;
                train("train", &p.train)?;
                positive("seeds", p.seeds)?;
                unit_interval("delta", p.delta, false)?;
                if !(p.margin_gamma > 0.0) {
                    return Err(field_error("margin_gamma", "must be positive"));
                }
            }
            Experiment::BoundVsDepth(p) => {
                data("data", &p.data, base)?;
                if p.m < 2 {
                    return Err(field_error("m", "must be at least 2"));
                }
                positive("test_size", p.test_size)?;
                nonempty_positive("depths", &p.depths)?;
                if p.depths.contains(&1) {
                    return Err(field_error("depths", "depth must be at least 2"));
                }
                positive("width", p.width)?;
                train("train", &p.train)?;
                positive("seeds", p.seeds)?;
                unit_interval("delta", p.delta, false)?;
                unit_interval("preact_pct", p.preact_pct, true)?;
                if let GammaClass::Fixed { value } = p.gamma_class {
                    if !(value > 0.0) {
                        return Err(field_error("gamma_class.value", "must be positive"));
                    }
                }
            }
            Experiment::MarginGap(p) => {
                data("data", &p.data, base)?;
                nonempty_positive("ms", &p.ms)?;
                positive("test_size", p.test_size)?;
                unit_interval("label_noise", p.label_noise, true)?;
                nonempty_positive("hidden", &p.hidden)?;
                train("train", &p.train)?;
                positive("seeds", p.seeds)?;
            }
            Experiment::Interp(p) => {
                data("data", &p.data, base)?;
                if p.m < 2 {
                    return Err(field_error("m", "must be at least 2"));
                }
                positive("test_size", p.test_size)?;
                nonempty_positive("hidden", &p.hidden)?;
                train("train", &p.train)?;
                if p.steps < 2 {
                    return Err(field_error("steps", "must be at least 2"));
                }
            }
            Experiment::UcfailLinear(p) => {
                positive("m", p.m)?;
                positive("k", p.k)?;
                positive("n", p.n)?;
                unit_interval("eps", p.eps, false)?;
                unit_interval("delta", p.delta, false)?;
                positive("trials", p.trials)?;
                positive("test_samples", p.test_samples)?;
            }
            Experiment::UcfailExp(p) => {
                positive("m", p.m)?;
                positive("n", p.n)?;
                unit_interval("eps", p.eps, false)?;
                unit_interval("delta", p.delta, false)?;
                positive("trials", p.trials)?;
                positive("test_samples", p.test_samples)?;
            }
            Experiment::UcfailHypersphere(p) => {
                nonempty_positive("ms", &p.ms)?;
                positive("dim", p.dim)?;
                if !(p.r_in > 0.0 && p.r_out > 0.0) || p.r_in == p.r_out {
                    return Err(field_error("r_in", "radii must be positive and distinct"));
                }
                positive("width", p.width)?;
                train("train", &p.train)?;
                positive("trials", p.trials)?;
                positive("test_samples", p.test_samples)?;
            }
            Experiment::GdeScatter(p) => {
                data("data", &p.data, base)?;
                if p.m < 2 {
                    return Err(field_error("m", "must be at least 2"));
                }
                positive("test_size", p.test_size)?;
                nonempty_positive("hidden", &p.hidden)?;
                train("train", &p.train)?;
                if p.modes.is_empty() {
                    return Err(field_error("modes", "must be non-empty"));
                }
                positive("pairs_per_mode", p.pairs_per_mode)?;
                if !(p.band >= 0.0) {
                    return Err(field_error("band", "must be >= 0"));
                }
                positive("bins", p.bins)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the seed and experiment.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&(self.seed, &self.experiment)).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "experiment": {"kind": "ucfail-linear", "m": 10, "n": 1000, "eps": 0.1, "delta": 0.1, "trials": 2}
    }"#;

    #[test]
    fn parses_and_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        match &c.experiment {
            Experiment::UcfailLinear(p) => {
                assert_eq!(p.k, 2);
                assert_eq!(p.test_samples, 10_000);
            }
            other => panic!("unexpected {other:?}"),
        }
        c.validate(Path::new(".")).unwrap();
    }

    #[test]
    fn unknown_field_reports_position() {
        let bad = MINIMAL.replace("\"trials\"", "\"trails\"");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        // Tagged objects are buffered, so the position is the object's end.
        assert!(err.contains("line 4 column 5"), "{err}");
        assert_eq!(err.matches("line").count(), 1, "{err}");
        assert!(err.contains("trails"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad = MINIMAL.replace("\"eps\": 0.1", "\"eps\": 1.5");
        let c = ExperimentConfig::parse(&bad).unwrap();
        let err = c.validate(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("experiment.eps"), "{err}");
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::parse(MINIMAL).unwrap();
        let h = a.hash();
        assert_eq!(h.len(), 64);
        a.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), h);
        a.seed = 4;
        assert_ne!(a.hash(), h);
    }
}
