//! Noise resilience under Gaussian weight perturbations: the analytic
//! tolerances on layer norms, preactivations and Jacobian norms, and their
//! empirical counterparts measured by sampling perturbations.
//!
//! Pair-indexed quantities use `[d'][d]` for the Jacobian `J^{d/d'}` of
//! layer `d` with respect to layer `d'`, `1 <= d' <= d <= D`.

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{invalid, Result};
use crate::linalg::{self, frobenius_norm, max_row_l2, sample_gaussian_matrix, spectral_norm_default, Matrix};
use crate::network::{margin, ForwardTrace, JacobianTable, Mlp};
use crate::rng::{derive_seed, Rng};

/// Default Monte-Carlo trial count for per-point probabilities.
pub const DEFAULT_TRIALS: usize = 200;

/// Square table indexed `[d'][d]` with `0..=D` on both axes; only
/// `1 <= d' <= d <= D` is meaningful.
pub type PairTable = Vec<Vec<f64>>;

fn pair_table(depth: usize) -> PairTable {
    vec![vec![0.0; depth + 1]; depth + 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSet {
    pub depth: usize,
    /// `alpha[d]` bounds the change in `‖f^d‖`; `alpha[0] = 0`.
    pub alpha: Vec<f64>,
    /// `gamma[d]` bounds the largest change of a layer-`d` preactivation
    /// (`gamma[0]` unused).
    pub gamma: Vec<f64>,
    /// Row-ℓ2 Jacobian tolerances; zero on the diagonal.
    pub zeta: PairTable,
    /// Spectral Jacobian tolerances; zero on the diagonal.
    pub psi: PairTable,
    pub sigma: f64,
    pub delta_hat: f64,
}

impl ToleranceSet {
    pub fn zeros(depth: usize, sigma: f64, delta_hat: f64) -> Self {
        Self {
            depth,
            alpha: vec![0.0; depth + 1],
            gamma: vec![0.0; depth + 1],
            zeta: pair_table(depth),
            psi: pair_table(depth),
            sigma,
            delta_hat,
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha
            .iter()
            .chain(&self.gamma)
            .chain(self.zeta.iter().flatten())
            .chain(self.psi.iter().flatten())
            .copied()
    }

    pub fn max_value(&self) -> f64 {
        self.values().fold(0.0, f64::max)
    }
}

/// Norms of one clean forward pass that the tolerance formulas consume.
#[derive(Clone, Debug)]
pub struct TraceNorms {
    pub depth: usize,
    pub width: usize,
    /// `‖f^d‖` for `d = 0..D`.
    pub output: Vec<f64>,
    pub jac_frob: PairTable,
    pub jac_row: PairTable,
    pub jac_spec: PairTable,
    /// `‖W_d‖_{2,∞}` and `‖W_d‖₂`, index `d` (`[0]` unused).
    pub weight_row: Vec<f64>,
    pub weight_spec: Vec<f64>,
}

impl TraceNorms {
    pub fn new(net: &Mlp<f64>, trace: &ForwardTrace<f64>) -> Result<Self> {
        let depth = net.depth();
        let table = net.jacobian_table(trace)?;
        let mut norms = Self {
            depth,
            width: net.max_width(),
            output: (0..depth).map(|d| linalg::l2_norm(trace.f(d))).collect(),
            jac_frob: pair_table(depth),
            jac_row: pair_table(depth),
            jac_spec: pair_table(depth),
            weight_row: vec![0.0; depth + 1],
            weight_spec: vec![0.0; depth + 1],
        };
        for d in 1..=depth {
            norms.weight_row[d] = max_row_l2(net.weight(d))?;
            norms.weight_spec[d] = spectral_norm_default(net.weight(d))?;
            for dp in 1..=d {
                let j = table.get(dp, d);
                norms.jac_frob[dp][d] = frobenius_norm(j)?;
                norms.jac_row[dp][d] = max_row_l2(j)?;
                norms.jac_spec[dp][d] = spectral_norm_default(j)?;
            }
        }
        Ok(norms)
    }
}

fn check_sigma_delta(sigma: f64, delta_hat: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("sigma must be finite and >= 0, got {sigma}"));
    }
    if !(delta_hat > 0.0 && delta_hat < 1.0) {
        return invalid(format!("delta_hat must lie in (0, 1), got {delta_hat}"));
    }
    Ok(())
}

/// One application of the tolerance map: output tolerances `Ĉ′` from the
/// clean-trace norms and the input tolerances `Ĉ` of preceding properties.
pub fn analytic_tolerances(
    net: &Mlp<f64>,
    trace: &ForwardTrace<f64>,
    sigma: f64,
    delta_hat: f64,
    input: &ToleranceSet,
) -> Result<ToleranceSet> {
    check_sigma_delta(sigma, delta_hat)?;
    if input.depth != net.depth() {
        return invalid("input tolerances belong to a network of different depth");
    }
    let norms = TraceNorms::new(net, trace)?;
    Ok(tolerances_from_norms(&norms, sigma, delta_hat, input))
}

pub fn tolerances_from_norms(n: &TraceNorms, sigma: f64, delta_hat: f64, c: &ToleranceSet) -> ToleranceSet {
    let depth = n.depth;
    let dh = (depth * n.width) as f64;
    let log2 = (2.0 * (2.0 * dh / delta_hat).ln()).sqrt();
    let log4 = (4.0 * (dh / delta_hat).ln()).sqrt();
    let sqrt_h = (n.width as f64).sqrt();
    let mut out = ToleranceSet::zeros(depth, sigma, delta_hat);
    for d in 1..=depth {
        let input_term = |dp: usize| n.output[dp - 1] + c.alpha[dp - 1];
        out.alpha[d] = sigma * (1..=d).map(|dp| n.jac_frob[dp][d] * input_term(dp)).sum::<f64>() * log2;
        out.gamma[d] = sigma * (1..=d).map(|dp| n.jac_row[dp][d] * input_term(dp)).sum::<f64>() * log2;
        for dp in 1..d {
            let zeta_term = |k: usize| n.jac_frob[dp][k] + c.zeta[dp][k] * sqrt_h;
            let psi_term = |k: usize| n.jac_spec[dp][k] + c.psi[dp][k];
            let zeta_sum: f64 = (dp + 1..d)
                .map(|dpp| n.weight_row[d] * n.jac_spec[dpp][d - 1] * zeta_term(dpp - 1))
                .sum();
            let psi_sum: f64 = (dp + 1..d)
                .map(|dpp| n.weight_spec[d] * n.jac_spec[dpp][d - 1] * psi_term(dpp - 1))
                .sum();
            out.zeta[dp][d] = sigma * (zeta_term(d - 1) + zeta_sum) * log4;
            out.psi[dp][d] = sigma * sqrt_h * (psi_term(d - 1) + psi_sum) * log2;
        }
    }
    out
}

/// Fixed point of the tolerance map: each layer's tolerances only read
/// earlier layers, so `D + 1` applications from zero settle every entry.
pub fn self_consistent_tolerances(
    net: &Mlp<f64>,
    trace: &ForwardTrace<f64>,
    sigma: f64,
    delta_hat: f64,
) -> Result<ToleranceSet> {
    check_sigma_delta(sigma, delta_hat)?;
    let norms = TraceNorms::new(net, trace)?;
    let mut tol = ToleranceSet::zeros(net.depth(), sigma, delta_hat);
    for _ in 0..=net.depth() {
        tol = tolerances_from_norms(&norms, sigma, delta_hat, &tol);
    }
    Ok(tol)
}

/// Deviations observed in one perturbation trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    /// `|‖f^d(W)‖ − ‖f^d(W+U)‖|`, index `d` (`[0] = 0`).
    pub layer_norm: Vec<f64>,
    /// `max_h |g^d_h(W) − g^d_h(W+U)|`, index `d`.
    pub preact: Vec<f64>,
    /// `max_h |‖J_h‖ − ‖J′_h‖|` over rows of `J^{d/d'}`.
    pub jac_row: PairTable,
    /// `|‖J‖₂ − ‖J′‖₂|`.
    pub jac_spec: PairTable,
    /// Hidden units whose activation state changed, index `d`.
    pub flips: Vec<usize>,
}

impl Deviations {
    fn zeros(depth: usize) -> Self {
        Self {
            layer_norm: vec![0.0; depth + 1],
            preact: vec![0.0; depth + 1],
            jac_row: pair_table(depth),
            jac_spec: pair_table(depth),
            flips: vec![0; depth + 1],
        }
    }

    fn absorb_max(&mut self, other: &Deviations) {
        let max_into = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, &y)| *x = x.max(y));
        max_into(&mut self.layer_norm, &other.layer_norm);
        max_into(&mut self.preact, &other.preact);
        for (a, b) in self.jac_row.iter_mut().zip(&other.jac_row) {
            max_into(a, b);
        }
        for (a, b) in self.jac_spec.iter_mut().zip(&other.jac_spec) {
            max_into(a, b);
        }
        for (a, b) in self.flips.iter_mut().zip(&other.flips) {
            *a += b;
        }
    }

    pub fn any_flip(&self) -> bool {
        self.flips.iter().any(|&f| f > 0)
    }

    /// Whether every deviation sits within the matching tolerance.
    pub fn within(&self, tol: &ToleranceSet) -> bool {
        self.violations(tol).is_empty()
    }

    /// Names of the tolerances this trial exceeded.
    pub fn violations(&self, tol: &ToleranceSet) -> Vec<String> {
        let depth = tol.depth;
        let mut out = Vec::new();
        for d in 1..depth {
            if self.layer_norm[d] > tol.alpha[d] {
                out.push(format!("alpha[{d}]"));
            }
        }
        for d in 1..=depth {
            if self.preact[d] > tol.gamma[d] {
                out.push(format!("gamma[{d}]"));
            }
            for dp in 1..d {
                if self.jac_row[dp][d] > tol.zeta[dp][d] {
                    out.push(format!("zeta[{dp}][{d}]"));
                }
                if self.jac_spec[dp][d] > tol.psi[dp][d] {
                    out.push(format!("psi[{dp}][{d}]"));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStats {
    pub trials: usize,
    /// Largest deviation per quantity over all trials; `flips` holds the
    /// total flip count per layer.
    pub max: Deviations,
    pub trials_with_flips: usize,
    pub per_trial: Vec<Deviations>,
}

impl PerturbationStats {
    /// Fraction of trials whose deviations all sat within `tol`.
    pub fn fraction_within(&self, tol: &ToleranceSet) -> f64 {
        if self.trials == 0 {
            return 1.0;
        }
        self.per_trial.iter().filter(|d| d.within(tol)).count() as f64 / self.trials as f64
    }

    /// Lowest per-tolerance coverage: for each tolerance, the fraction of
    /// trials that respected it, minimized over tolerances.
    pub fn worst_coverage(&self, tol: &ToleranceSet) -> f64 {
        if self.trials == 0 {
            return 1.0;
        }
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for d in &self.per_trial {
            for v in d.violations(tol) {
                *counts.entry(v).or_default() += 1;
            }
        }
        let worst = counts.values().copied().max().unwrap_or(0);
        1.0 - worst as f64 / self.trials as f64
    }
}

fn perturbed(net: &Mlp<f64>, sigma: f64, rng: &mut Rng) -> Result<Mlp<f64>> {
    let weights = net
        .weights()
        .iter()
        .map(|w| {
            let u: Matrix<f64> = sample_gaussian_matrix(w.rows(), w.cols(), sigma, rng)?;
            w.add(&u)
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_parts(weights, net.init().to_vec())
}

/// Forward pass of `net` with the hidden activation pattern pinned to `masks`.
fn frozen_trace(net: &Mlp<f64>, x: &[f64], masks: &[Vec<bool>]) -> Result<ForwardTrace<f64>> {
    let depth = net.depth();
    let mut preacts = Vec::with_capacity(depth);
    let mut activations = vec![x.to_vec()];
    for d in 1..=depth {
        let g = net.weight(d).matvec(&activations[d - 1])?;
        if d < depth {
            let f = g
                .iter()
                .zip(&masks[d - 1])
                .map(|(&v, &on)| if on { v } else { 0.0 })
                .collect();
            activations.push(f);
        }
        preacts.push(g);
    }
    Ok(ForwardTrace { input: x.to_vec(), preacts, activations })
}

/// Jacobians of `net` built on the given activation pattern.
fn frozen_jacobians(net: &Mlp<f64>, masks: &[Vec<bool>]) -> Result<JacobianTable<f64>> {
    // A synthetic trace whose preactivations carry the pinned pattern.
    let depth = net.depth();
    let preacts = (1..=depth)
        .map(|d| {
            if d < depth {
                masks[d - 1].iter().map(|&on| if on { 1.0 } else { 0.0 }).collect()
            } else {
                vec![0.0; net.output_dim()]
            }
        })
        .collect();
    let trace = ForwardTrace { input: vec![], preacts, activations: vec![] };
    net.jacobian_table(&trace)
}

/// Samples `trials` perturbations `U` with i.i.d. `N(0, σ²)` entries on all
/// layers at once and records how far each property of `x` moves. With
/// `frozen` set, the perturbed network keeps the clean activation pattern.
pub fn empirical_perturbations(
    net: &Mlp<f64>,
    x: &[f64],
    sigma: f64,
    trials: usize,
    rng: &mut Rng,
    frozen: bool,
) -> Result<PerturbationStats> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("sigma must be finite and >= 0, got {sigma}"));
    }
    let depth = net.depth();
    let clean = net.forward_trace(x)?;
    let clean_jac = net.jacobian_table(&clean)?;
    let masks: Vec<Vec<bool>> = (1..depth).map(|d| clean.mask(d)).collect();
    let base = rng.next_seed();
    let mut max = Deviations::zeros(depth);
    let mut per_trial = Vec::with_capacity(trials);
    let mut trials_with_flips = 0;
    for t in 0..trials {
        let mut trial_rng = Rng::new(derive_seed(base, t as u64));
        let pnet = perturbed(net, sigma, &mut trial_rng)?;
        let (trace, jac) = if frozen {
            (frozen_trace(&pnet, x, &masks)?, frozen_jacobians(&pnet, &masks)?)
        } else {
            let tr = pnet.forward_trace(x)?;
            let jac = pnet.jacobian_table(&tr)?;
            (tr, jac)
        };
        let free = if frozen { pnet.forward_trace(x)? } else { trace.clone() };
        let mut dev = Deviations::zeros(depth);
        for d in 1..=depth {
            if d < depth {
                dev.layer_norm[d] = (linalg::l2_norm(clean.f(d)) - linalg::l2_norm(trace.f(d))).abs();
                dev.flips[d] = free.mask(d).iter().zip(&masks[d - 1]).filter(|(a, b)| a != b).count();
            }
            dev.preact[d] = clean
                .g(d)
                .iter()
                .zip(trace.g(d))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            for dp in 1..d {
                let (a, b) = (clean_jac.get(dp, d), jac.get(dp, d));
                dev.jac_row[dp][d] = (0..a.rows())
                    .map(|h| (linalg::l2_norm(a.row(h)) - linalg::l2_norm(b.row(h))).abs())
                    .fold(0.0, f64::max);
                dev.jac_spec[dp][d] = (spectral_norm_default(a)? - spectral_norm_default(b)?).abs();
            }
        }
        if dev.any_flip() {
            trials_with_flips += 1;
        }
        max.absorb_max(&dev);
        per_trial.push(dev);
    }
    Ok(PerturbationStats { trials, max, trials_with_flips, per_trial })
}

/// Fraction of points whose margin moves by more than `Δ/2` with
/// probability above `ν` under weight noise of scale `σ`, each probability
/// estimated from the same `trials` perturbation draws. `Δ = ∞` gives 0.
pub fn noise_resilience_fraction(
    net: &Mlp<f64>,
    data: &LabeledDataset,
    sigma: f64,
    big_delta: f64,
    nu: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if !(big_delta > 0.0) {
        return invalid(format!("margin budget must be positive, got {big_delta}"));
    }
    if !(sigma >= 0.0) {
        return invalid(format!("sigma must be >= 0, got {sigma}"));
    }
    if data.is_empty() || trials == 0 {
        return invalid("need a nonempty dataset and at least one trial");
    }
    if big_delta.is_infinite() || sigma == 0.0 {
        return Ok(0.0);
    }
    let clean = net.margins(data.inputs(), data.labels())?;
    let mut exceed = vec![0usize; data.len()];
    let base = rng.next_seed();
    for t in 0..trials {
        let pnet = perturbed(net, sigma, &mut Rng::new(derive_seed(base, t as u64)))?;
        let logits = pnet.forward_batch(data.inputs())?;
        for (i, (&y, &g)) in data.labels().iter().zip(&clean).enumerate() {
            if (margin(logits.row(i), y)? - g).abs() > big_delta / 2.0 {
                exceed[i] += 1;
            }
        }
    }
    let bad = exceed.iter().filter(|&&c| c as f64 / trials as f64 > nu).count();
    Ok(bad as f64 / data.len() as f64)
}
