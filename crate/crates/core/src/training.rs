//! Mini-batch SGD with heavy-ball momentum, stopping rules, run pairs that
//! differ in chosen sources of randomness, and weight interpolation.

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::network::{LossKind, Mlp};
use crate::rng::{derive_seed, Rng};
use crate::scalar::Real;

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every_n_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    /// At least a fraction `p` of the training set has margin `>= gamma`.
    MarginFraction { p: f64, gamma: f64 },
    /// Mean training loss `<= tau`.
    TrainLoss { tau: f64 },
    /// Every training example classified correctly.
    TrainAccuracy,
    /// Run exactly `max_epochs` epochs.
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub lr_decay: Option<LrDecay>,
    pub loss: LossKind,
    pub stop_rule: StopRule,
    /// Hard cap on epochs for every stop rule.
    pub max_epochs: usize,
    #[serde(default)]
    pub seed_init: u64,
    #[serde(default)]
    pub seed_order: u64,
    /// Xavier scale `c`: initial entries have standard deviation `c/√fan_in`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return invalid(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if let Some(decay) = self.lr_decay {
            if !(decay.factor > 0.0) || decay.every_n_epochs == 0 {
                return invalid("lr decay needs factor > 0 and every_n_epochs >= 1");
            }
        }
        if let StopRule::MarginFraction { p, gamma } = self.stop_rule {
            if !(p > 0.0 && p <= 1.0) {
                return invalid(format!("margin fraction p must lie in (0, 1], got {p}"));
            }
            if !(gamma >= 0.0) {
                return invalid(format!("margin threshold must be >= 0, got {gamma}"));
            }
        }
        if !(self.init_scale > 0.0) {
            return invalid("init_scale must be positive");
        }
        Ok(())
    }

    /// Learning rate in effect during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.factor.powi((epoch / d.every_n_epochs) as i32),
            None => self.lr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RuleMet,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
    /// Fraction of examples with margin at least the rule's threshold
    /// (threshold 0 for rules without one).
    pub margin_fraction: f64,
    pub stop_reason: StopReason,
    pub decay_events: usize,
    pub final_lr: f64,
    pub loss_history: Vec<f64>,
}

/// True iff at least a fraction `p` of `data` has margin `>= gamma`.
pub fn margin_stop_check<T: Real>(net: &Mlp<T>, data: &LabeledDataset<T>, p: f64, gamma: f64) -> Result<bool> {
    Ok(margin_fraction(net, data, gamma)? >= p)
}

pub fn margin_fraction<T: Real>(net: &Mlp<T>, data: &LabeledDataset<T>, gamma: f64) -> Result<f64> {
    if data.is_empty() {
        return invalid("margin check on an empty dataset");
    }
    let margins = net.margins(data.inputs(), data.labels())?;
    let ok = margins.iter().filter(|g| g.to_f64_lossy() >= gamma).count();
    Ok(ok as f64 / data.len() as f64)
}

struct EpochStats {
    loss: f64,
    accuracy: f64,
    margin_fraction: f64,
}

fn evaluate<T: Real>(net: &Mlp<T>, data: &LabeledDataset<T>, cfg: &TrainConfig) -> Result<EpochStats> {
    let margins = net.margins(data.inputs(), data.labels())?;
    let n = data.len() as f64;
    let correct = margins.iter().filter(|&&g| g >= T::zero()).count();
    let gamma = match cfg.stop_rule {
        StopRule::MarginFraction { gamma, .. } => gamma,
        _ => 0.0,
    };
    let above = margins.iter().filter(|g| g.to_f64_lossy() >= gamma).count();
    Ok(EpochStats {
        loss: net.mean_loss(data.inputs(), data.labels(), cfg.loss)?.to_f64_lossy(),
        accuracy: correct as f64 / n,
        margin_fraction: above as f64 / n,
    })
}

fn rule_met(cfg: &TrainConfig, stats: &EpochStats) -> bool {
    match cfg.stop_rule {
        StopRule::MarginFraction { p, .. } => stats.margin_fraction >= p,
        StopRule::TrainLoss { tau } => stats.loss <= tau,
        StopRule::TrainAccuracy => stats.accuracy >= 1.0,
        StopRule::MaxEpochs => false,
    }
}

/// Network initialized from `cfg.seed_init`.
pub fn init_net<T: Real>(widths: &[usize], cfg: &TrainConfig) -> Result<Mlp<T>> {
    Mlp::xavier(widths, cfg.init_scale, &mut Rng::new(cfg.seed_init))
}

/// Trains `net` in place. Each epoch shuffles the data with a stream seeded
/// by `seed_order` and scans it in batches, keeping the last short batch.
/// The update is `v ← μ·v − lr·∇`, `W ← W + v`.
///
/// When a batch loss is non-finite or above [`DIVERGENCE_LOSS`] the net is
/// restored to its state at the start of that epoch and
/// [`Error::Diverged`] is returned.
pub fn sgd_train<T: Real>(net: &mut Mlp<T>, data: &LabeledDataset<T>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return invalid("training on an empty dataset");
    }
    if data.dim() != net.input_dim() {
        return invalid(format!(
            "data has dimension {}, network expects {}",
            data.dim(),
            net.input_dim()
        ));
    }
    if data.space().output_dim() != net.output_dim() {
        return invalid(format!(
            "label space {:?} needs {} outputs, network has {}",
            data.space(),
            data.space().output_dim(),
            net.output_dim()
        ));
    }
    let mut order_rng = Rng::new(cfg.seed_order);
    let mut velocity: Vec<Matrix<T>> = net
        .weights()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let momentum = T::of(cfg.momentum);
    let mut stats = evaluate(net, data, cfg)?;
    let mut last_finite = stats.loss;
    let mut history = Vec::new();
    let mut steps = 0;
    let mut epoch = 0;
    let mut reason = StopReason::MaxEpochs;
    let needs_training = |stats: &EpochStats| cfg.stop_rule == StopRule::MaxEpochs || !rule_met(cfg, stats);
    if !needs_training(&stats) {
        reason = StopReason::RuleMet;
    }
    while reason != StopReason::RuleMet && epoch < cfg.max_epochs {
        let lr = T::of(cfg.lr_at(epoch));
        let snapshot = net.clone();
        let order = order_rng.permutation(data.len());
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[T]> = batch.iter().map(|&i| data.inputs()[i].as_slice()).collect();
            let ys: Vec<_> = batch.iter().map(|&i| data.labels()[i]).collect();
            let (loss, grads) = net.backprop_grad(&xs, &ys, cfg.loss)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                *net = snapshot;
                return Err(Error::Diverged { epoch, last_finite_loss: last_finite });
            }
            last_finite = loss;
            for ((w, v), g) in net.weights_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                for (vi, &gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *vi = momentum * *vi - lr * gi;
                }
                w.axpy_in_place(T::one(), v);
            }
            steps += 1;
        }
        epoch += 1;
        stats = evaluate(net, data, cfg)?;
        if !stats.loss.is_finite() || stats.loss > DIVERGENCE_LOSS {
            // Weights blew up on the last batch of the epoch.
            return Err(Error::Diverged { epoch: epoch - 1, last_finite_loss: last_finite });
        }
        history.push(stats.loss);
        if !needs_training(&stats) {
            reason = StopReason::RuleMet;
        }
    }
    let decay_events = cfg
        .lr_decay
        .map_or(0, |d| epoch.saturating_sub(1) / d.every_n_epochs);
    Ok(TrainReport {
        epochs: epoch,
        steps,
        final_loss: stats.loss,
        final_accuracy: stats.accuracy,
        margin_fraction: stats.margin_fraction,
        stop_reason: reason,
        decay_events,
        final_lr: cfg.lr_at(epoch.saturating_sub(1)),
        loss_history: history,
    })
}

/// Which sources of randomness differ between the two runs of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticityMode {
    /// Different initialization, data half and ordering.
    AllDiff,
    /// Same initialization and ordering seed, disjoint data halves.
    DiffData,
    /// Same data and ordering, different initialization.
    DiffInit,
    /// Same initialization and data, different ordering.
    DiffOrder,
    /// Nothing differs; a determinism control.
    Identical,
}

#[derive(Clone, Debug)]
pub struct RunPair<T> {
    pub nets: [Mlp<T>; 2],
    pub reports: [TrainReport; 2],
    /// Indices into the input dataset each run trained on.
    pub train_indices: [Vec<usize>; 2],
}

/// Trains two networks that differ exactly in the sources named by `mode`.
/// The second run's seeds, when they differ, are derived from the first's.
pub fn make_run_pair<T: Real>(
    widths: &[usize],
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    mode: StochasticityMode,
) -> Result<RunPair<T>> {
    use StochasticityMode::*;
    let split_data = matches!(mode, DiffData | AllDiff);
    if split_data && data.len() < 2 {
        return invalid("splitting the data needs at least two examples");
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let indices = if split_data {
        let mut perm = Rng::new(derive_seed(cfg.seed_order, 0x5EED)).permutation(data.len());
        let second = perm.split_off(data.len() / 2);
        [perm, second]
    } else {
        [all.clone(), all]
    };
    let mut cfg2 = cfg.clone();
    if matches!(mode, DiffInit | AllDiff) {
        cfg2.seed_init = derive_seed(cfg.seed_init, 1);
    }
    if matches!(mode, DiffOrder | AllDiff) {
        cfg2.seed_order = derive_seed(cfg.seed_order, 1);
    }
    let run = |c: &TrainConfig, idx: &[usize]| -> Result<(Mlp<T>, TrainReport)> {
        let subset = data.subset(idx)?;
        let mut net = init_net(widths, c)?;
        let report = sgd_train(&mut net, &subset, c)?;
        Ok((net, report))
    };
    let (net1, rep1) = run(cfg, &indices[0])?;
    let (net2, rep2) = run(&cfg2, &indices[1])?;
    Ok(RunPair { nets: [net1, net2], reports: [rep1, rep2], train_indices: indices })
}

/// 0-1 error of `(1 − t)·W⁽¹⁾ + t·W⁽²⁾` at `steps` equispaced `t ∈ [0, 1]`.
pub fn interpolate_error<T: Real>(
    net1: &Mlp<T>,
    net2: &Mlp<T>,
    data: &LabeledDataset<T>,
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    if steps < 2 {
        return invalid("interpolation needs at least two steps");
    }
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let net = match i {
                0 => net1.clone(),
                _ if i == steps - 1 => net2.clone(),
                _ => net1.lerp(net2, T::of(t))?,
            };
            Ok((t, net.error_rate(data.inputs(), data.labels())?))
        })
        .collect()
}
