//! Closed-form learners and uniform-convergence-failure reports for the
//! linear, exponential-activation and hypersphere setups.

use serde::{Deserialize, Serialize};

use crate::datagen::{
    exp_bad_dataset, exp_conditions, gen_hypersphere, with_constant_feature, hypersphere_bad_dataset, linear_bad_dataset, linear_conditions,
    ExpSetup, LabelSpace, LabeledDataset, LinearSetup, LinearSetupParams, ScenarioMeta,
};
use crate::error::{invalid, Result};
use crate::linalg::dot;
use crate::network::Mlp;
use crate::rng::{derive_seed, Rng};
use crate::training::{init_net, sgd_train, TrainConfig};

/// Weights of the linear learner, `h(x) = w1·x₁ + w2·x₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearLearnerWeights {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// One gradient-ascent step of rate 1 per example on `y·h(x)` from zero:
/// `w1 = 2m·u`, `w2 = Σ yᵢ x₂⁽ⁱ⁾`.
pub fn linear_learn(s: &LabeledDataset) -> Result<LinearLearnerWeights> {
    let (u, k, n) = match s.meta() {
        Some(ScenarioMeta::Linear { u, k, n }) => (u, *k, *n),
        _ => return invalid("linear learner needs a dataset with linear-setup metadata"),
    };
    if s.dim() != k + n {
        return invalid(format!("input dimension {} does not match K + N = {}", s.dim(), k + n));
    }
    // One step per example, so w1 rounds exactly as the gradient steps do.
    let mut w1 = vec![0.0; k];
    let mut w2 = vec![0.0; n];
    for (x, &y) in s.inputs().iter().zip(s.labels()) {
        for (w, &v) in w1.iter_mut().zip(u) {
            *w += 2.0 * v;
        }
        let y = y as f64;
        for (w, &v) in w2.iter_mut().zip(&x[k..]) {
            *w += y * v;
        }
    }
    Ok(LinearLearnerWeights { w1, w2 })
}

/// `h(x) = w1·x₁ + w2·x₂`.
pub fn linear_eval(w: &LinearLearnerWeights, x: &[f64]) -> Result<f64> {
    let k = w.w1.len();
    if x.len() != k + w.w2.len() {
        return invalid(format!("input has {} entries, weights expect {}", x.len(), k + w.w2.len()));
    }
    Ok(dot(&w.w1, &x[..k]) + dot(&w.w2, &x[k..]))
}

/// A real number stored as a sign and a natural-log magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    /// `-1`, `0` or `1`.
    pub sign: i8,
    /// `ln |value|`; `-∞` when the sign is 0.
    pub log_magnitude: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog { sign: 0, log_magnitude: f64::NEG_INFINITY };

    pub fn to_f64(self) -> f64 {
        self.sign as f64 * self.log_magnitude.exp()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `Σ signᵢ·exp(exponentᵢ)` in the signed log domain.
pub fn signed_log_sum_exp(terms: &[(i8, f64)]) -> SignedLog {
    let pos: Vec<f64> = terms.iter().filter(|t| t.0 > 0).map(|t| t.1).collect();
    let neg: Vec<f64> = terms.iter().filter(|t| t.0 < 0).map(|t| t.1).collect();
    let (lp, ln) = (log_sum_exp(&pos), log_sum_exp(&neg));
    if lp == ln {
        return SignedLog::ZERO;
    }
    let (sign, hi, lo) = if lp > ln { (1, lp, ln) } else { (-1, ln, lp) };
    let log_magnitude = hi + (-(lo - hi).exp()).ln_1p();
    SignedLog { sign, log_magnitude }
}

/// The infinitely wide exponential-activation network after one gradient
/// step per training point, `h(z) = Σᵢ yᵢ exp(‖(z + xᵢ)/2‖²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpModel {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
    pub n: usize,
    /// Learning rate `η = (4π)^N` in log form.
    pub log_eta: f64,
}

impl ExpModel {
    pub fn new(s: &LabeledDataset) -> Result<Self> {
        if s.space() != LabelSpace::Binary {
            return invalid("exponential model needs binary labels");
        }
        let n = match s.meta() {
            Some(ScenarioMeta::Exp { n, .. }) => *n,
            _ if s.dim() % 2 == 0 => s.dim() / 2,
            _ => return invalid("exponential model needs an even input dimension"),
        };
        if s.dim() != 2 * n {
            return invalid(format!("input dimension {} does not match 2N = {}", s.dim(), 2 * n));
        }
        Ok(Self {
            inputs: s.inputs().to_vec(),
            labels: s.labels().iter().map(|&y| y as i8).collect(),
            n,
            log_eta: n as f64 * (4.0 * std::f64::consts::PI).ln(),
        })
    }
}

/// Sign and log magnitude of `h(z)`.
pub fn exp_eval(model: &ExpModel, z: &[f64]) -> Result<SignedLog> {
    if z.len() != 2 * model.n {
        return invalid(format!("input has {} entries, model expects {}", z.len(), 2 * model.n));
    }
    let terms: Vec<(i8, f64)> = model
        .inputs
        .iter()
        .zip(&model.labels)
        .map(|(x, &y)| {
            let e = z
                .iter()
                .zip(x)
                .map(|(a, b)| {
                    let h = (a + b) / 2.0;
                    h * h
                })
                .sum::<f64>();
            (y, e)
        })
        .collect();
    Ok(signed_log_sum_exp(&terms))
}

/// How fresh test points are drawn for the closed-form setups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSampler {
    /// Draw only the low-dimensional projections of the noise that the
    /// learned model can see. Exact in distribution.
    #[default]
    Projected,
    /// Draw full input vectors.
    Materialized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UcfailScenario {
    Linear { k: usize, n: usize },
    Exp { n: usize },
    /// A one-hidden-layer ReLU net on `(x, 1)`, trained with `train`.
    Hypersphere { dim: usize, r_in: f64, r_out: f64, width: usize, train: TrainConfig },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcfailParams {
    pub m: usize,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
    pub test_samples: usize,
    #[serde(default)]
    pub sampler: TestSampler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcfailTrial {
    pub trial: usize,
    pub seed: u64,
    pub train_error: f64,
    pub test_error: f64,
    pub bad_error: f64,
    /// Smallest `y·h(x)` on the training set (linear and hypersphere).
    pub min_train_margin: Option<f64>,
    /// Smallest `ln(y·h(x))` on the training set (exponential setup);
    /// absent when some training point has `y·h(x) <= 0`.
    pub min_train_log_margin: Option<f64>,
    /// Training epochs (hypersphere only).
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcfailReport {
    pub scenario: UcfailScenario,
    pub params: UcfailParams,
    /// Whether the width conditions of the closed-form setups hold.
    pub conditions_met: Option<bool>,
    pub warning: Option<String>,
    pub trials: Vec<UcfailTrial>,
    pub mean_test_error: f64,
    pub frac_train_perfect: f64,
    pub frac_bad_fully_misclassified: f64,
    /// `1 − ε̂` with `ε̂` the mean test error.
    pub implied_lower_bound: f64,
}

fn error_fraction(errors: usize, total: usize) -> f64 {
    errors as f64 / total as f64
}

/// Misclassification counts `y·h <= 0` as an error.
fn linear_errors(w: &LinearLearnerWeights, s: &LabeledDataset) -> Result<(f64, f64)> {
    let mut errors = 0;
    let mut min_margin = f64::INFINITY;
    for (x, &y) in s.inputs().iter().zip(s.labels()) {
        let margin = y as f64 * linear_eval(w, x)?;
        min_margin = min_margin.min(margin);
        if margin <= 0.0 {
            errors += 1;
        }
    }
    Ok((error_fraction(errors, s.len()), min_margin))
}

fn linear_test_error(setup: &LinearSetup, w: &LinearLearnerWeights, params: &UcfailParams, rng: &mut Rng) -> Result<f64> {
    match params.sampler {
        TestSampler::Projected => {
            // y·h(x) = 2 w1·u + y w2·x₂ with y w2·x₂ ~ N(0, (32/N)‖w2‖²).
            let mean = 2.0 * dot(&w.w1, &setup.u);
            let sd = setup.noise_sigma() * dot(&w.w2, &w.w2).sqrt();
            let errors = (0..params.test_samples).filter(|_| mean + sd * rng.normal() <= 0.0).count();
            Ok(error_fraction(errors, params.test_samples))
        }
        TestSampler::Materialized => Ok(linear_errors(w, &setup.sample(params.test_samples, rng)?)?.0),
    }
}

fn exp_errors(model: &ExpModel, s: &LabeledDataset) -> Result<(f64, Option<f64>)> {
    let mut errors = 0;
    let mut min_log = Some(f64::INFINITY);
    for (x, &y) in s.inputs().iter().zip(s.labels()) {
        let h = exp_eval(model, x)?;
        if h.sign as i64 * y <= 0 {
            errors += 1;
            min_log = None;
        } else if let Some(v) = min_log.as_mut() {
            *v = v.min(h.log_magnitude);
        }
    }
    Ok((error_fraction(errors, s.len()), min_log))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - dot(&l[i][..j], &l[j][..j]);
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn exp_test_error(setup: &ExpSetup, model: &ExpModel, params: &UcfailParams, rng: &mut Rng) -> Result<f64> {
    let n = setup.n;
    let noise: Vec<&[f64]> = model.inputs.iter().map(|x| &x[n..]).collect();
    let gram: Vec<Vec<f64>> = noise.iter().map(|a| noise.iter().map(|b| dot(a, b)).collect()).collect();
    let factor = match (params.sampler, cholesky(&gram)) {
        (TestSampler::Projected, Some(l)) => l,
        _ => return Ok(exp_errors(model, &setup.sample(params.test_samples, rng)?)?.0),
    };
    // ‖z + xᵢ‖²/4 minus the common ‖z‖²/4, with z₂·x₂⁽ⁱ⁾ ~ N(0, Gram).
    let u_sq = dot(&setup.u, &setup.u);
    let x_sq: Vec<f64> = model.inputs.iter().map(|x| dot(x, x)).collect();
    let m = model.inputs.len();
    let mut errors = 0;
    let mut terms = vec![(0i8, 0.0); m];
    for _ in 0..params.test_samples {
        let yz = rng.sign();
        let e = rng.normal_vec(m, 1.0);
        for i in 0..m {
            let xi = dot(&factor[i][..=i], &e[..=i]);
            let yi = model.labels[i];
            let cross = (yz * yi as i64) as f64 * u_sq + xi;
            terms[i] = (yi, (x_sq[i] + 2.0 * cross) / 4.0);
        }
        if signed_log_sum_exp(&terms).sign as i64 * yz <= 0 {
            errors += 1;
        }
    }
    Ok(error_fraction(errors, params.test_samples))
}

fn check_params(p: &UcfailParams) -> Result<()> {
    if p.m == 0 || p.trials == 0 || p.test_samples == 0 {
        return invalid("m, trials and test_samples must be positive");
    }
    Ok(())
}

/// Runs `trials` independent training sets from one fixed distribution and
/// reports train, test and bad-dataset errors.
pub fn ucfail_report(scenario: &UcfailScenario, params: &UcfailParams, rng: &mut Rng) -> Result<UcfailReport> {
    check_params(params)?;
    let base = rng.next_seed();
    let mut trials = Vec::with_capacity(params.trials);
    let mut conditions_met = None;
    match scenario {
        UcfailScenario::Linear { k, n } => {
            let setup_params = LinearSetupParams { m: params.m, k: *k, n: *n };
            conditions_met = Some(linear_conditions(setup_params, params.eps, params.delta)?);
            let setup = LinearSetup::new(setup_params, rng)?;
            for t in 0..params.trials {
                let seed = derive_seed(base, t as u64);
                let mut trng = Rng::new(seed);
                let s = setup.sample(params.m, &mut trng)?;
                let w = linear_learn(&s)?;
                let (train_error, min_margin) = linear_errors(&w, &s)?;
                let bad_error = linear_errors(&w, &linear_bad_dataset(&s)?)?.0;
                let test_error = linear_test_error(&setup, &w, params, &mut trng)?;
                trials.push(UcfailTrial {
                    trial: t,
                    seed,
                    train_error,
                    test_error,
                    bad_error,
                    min_train_margin: Some(min_margin),
                    min_train_log_margin: None,
                    epochs: None,
                });
            }
        }
        UcfailScenario::Exp { n } => {
            conditions_met = Some(exp_conditions(params.m, *n, params.eps, params.delta)?);
            let setup = ExpSetup::new(*n, rng)?;
            for t in 0..params.trials {
                let seed = derive_seed(base, t as u64);
                let mut trng = Rng::new(seed);
                let s = setup.sample(params.m, &mut trng)?;
                let model = ExpModel::new(&s)?;
                let (train_error, min_log) = exp_errors(&model, &s)?;
                let bad_error = exp_errors(&model, &exp_bad_dataset(&s)?)?.0;
                let test_error = exp_test_error(&setup, &model, params, &mut trng)?;
                trials.push(UcfailTrial {
                    trial: t,
                    seed,
                    train_error,
                    test_error,
                    bad_error,
                    min_train_margin: None,
                    min_train_log_margin: min_log,
                    epochs: None,
                });
            }
        }
        UcfailScenario::Hypersphere { dim, r_in, r_out, width, train } => {
            train.validate()?;
            for t in 0..params.trials {
                let seed = derive_seed(base, t as u64);
                let mut trng = Rng::new(seed);
                let s = gen_hypersphere(params.m, *dim, *r_in, *r_out, &mut trng)?;
                let test = gen_hypersphere(params.test_samples, *dim, *r_in, *r_out, &mut trng)?;
                let bad = hypersphere_bad_dataset(&s)?;
                let cfg = TrainConfig { seed_init: derive_seed(seed, 1), seed_order: derive_seed(seed, 2), ..train.clone() };
                let mut net: Mlp<f32> = init_net(&[*dim + 1, *width, 2], &cfg)?;
                let s32 = with_constant_feature(&s, 1.0)?.convert::<f32>();
                let train_report = sgd_train(&mut net, &s32, &cfg)?;
                let margins = net.margins(s32.inputs(), s32.labels())?;
                let min_margin = margins.iter().copied().fold(f32::INFINITY, f32::min) as f64;
                let bad32 = with_constant_feature(&bad, 1.0)?.convert::<f32>();
                let test32 = with_constant_feature(&test, 1.0)?.convert::<f32>();
                trials.push(UcfailTrial {
                    trial: t,
                    seed,
                    train_error: net.error_rate(s32.inputs(), s32.labels())?,
                    test_error: net.error_rate(test32.inputs(), test32.labels())?,
                    bad_error: net.error_rate(bad32.inputs(), bad32.labels())?,
                    min_train_margin: Some(min_margin),
                    min_train_log_margin: None,
                    epochs: Some(train_report.epochs),
                });
            }
        }
    }
    let count = trials.len() as f64;
    let mean_test_error = trials.iter().map(|t| t.test_error).sum::<f64>() / count;
    let warning = match conditions_met {
        Some(false) => Some("width conditions of the setup are not met; guarantees do not apply".to_string()),
        _ => None,
    };
    Ok(UcfailReport {
        scenario: scenario.clone(),
        params: *params,
        conditions_met,
        warning,
        frac_train_perfect: trials.iter().filter(|t| t.train_error == 0.0).count() as f64 / count,
        frac_bad_fully_misclassified: trials.iter().filter(|t| t.bad_error == 1.0).count() as f64 / count,
        implied_lower_bound: 1.0 - mean_test_error,
        mean_test_error,
        trials,
    })
}
