//! Generalization bounds: the data-dependent ReLU bound built from the
//! training-set norm profile, its cheaper and preactivation variants,
//! PAC-Bayes arithmetic, and spectrally normalized baselines.
//!
//! Every asymptotic constant is set to 1; log factors are kept as written.

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, frobenius_norm, max_row_l2, norm_2_1_with, spectral_norm, Norm21Convention};
use crate::network::{loss_margin, Mlp};
use crate::noise::PairTable;

pub const CONSTANT_CONVENTION: &str = "all O-constants set to 1; log factors kept";

/// Tolerance for the many Jacobian spectral norms of the norm profile.
const PROFILE_SPECTRAL_TOL: f64 = 1e-9;

/// `√Σ_d ‖W_d − Z_d‖_F²` and the per-layer terms `‖W_d − Z_d‖_F`.
pub fn distance_from_init(net: &Mlp<f64>) -> Result<(f64, Vec<f64>)> {
    let per_layer = net
        .weights()
        .iter()
        .zip(net.init())
        .map(|(w, z)| frobenius_norm(&w.sub(z)?))
        .collect::<Result<Vec<_>>>()?;
    let total = per_layer.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((total, per_layer))
}

/// Training-set norm profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainNorms {
    pub depth: usize,
    /// `H`, the largest layer width.
    pub width: usize,
    pub m: usize,
    /// `α*_d = max(max_S ‖f^d‖, 1)` for `d = 0..D`.
    pub alpha: Vec<f64>,
    /// `γ*_d = min_S min_h |g^d_h|`, index `1..=D` (`[0]` unused). Not clamped.
    pub gamma: Vec<f64>,
    /// `ζ*_{d'/d} = max(max_S ‖J^{d/d'}‖_{2,∞}, 1)`, indexed `[d'][d]`.
    pub zeta: PairTable,
    /// `ψ*_{d'/d} = max(max_S ‖J^{d/d'}‖₂, 1)`, indexed `[d'][d]`.
    pub psi: PairTable,
    /// Smallest training margin.
    pub gamma_class: f64,
    /// `B = max(max_S ‖x‖, 1)`.
    pub input_bound: f64,
    /// `‖W_d‖_{2,∞}` and `‖W_d‖₂`, index `d` (`[0]` unused).
    pub weight_row: Vec<f64>,
    pub weight_spec: Vec<f64>,
    /// Per example and layer: the smallest `|g^d_h|`.
    pub example_min_preact: Vec<Vec<f64>>,
    /// Per example and layer: `|g^d|` sorted ascending, entry `⌊H_d/2⌋`.
    pub example_median_preact: Vec<Vec<f64>>,
}

pub fn train_norm_profile(net: &Mlp<f64>, data: &LabeledDataset) -> Result<TrainNorms> {
    if data.is_empty() {
        return invalid("norm profile of an empty dataset");
    }
    let depth = net.depth();
    let mut norms = TrainNorms {
        depth,
        width: net.max_width(),
        m: data.len(),
        alpha: vec![1.0; depth],
        gamma: vec![f64::INFINITY; depth + 1],
        zeta: vec![vec![1.0; depth + 1]; depth + 1],
        psi: vec![vec![1.0; depth + 1]; depth + 1],
        gamma_class: f64::INFINITY,
        input_bound: 1.0,
        weight_row: vec![0.0; depth + 1],
        weight_spec: vec![0.0; depth + 1],
        example_min_preact: Vec::with_capacity(data.len()),
        example_median_preact: Vec::with_capacity(data.len()),
    };
    norms.gamma[0] = 0.0;
    for d in 1..=depth {
        norms.weight_row[d] = max_row_l2(net.weight(d))?;
        norms.weight_spec[d] = spectral_norm(net.weight(d), PROFILE_SPECTRAL_TOL, linalg::DEFAULT_SPECTRAL_MAX_ITERS)?.value;
    }
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        let trace = net.forward_trace(x)?;
        let table = net.jacobian_table(&trace)?;
        norms.input_bound = norms.input_bound.max(linalg::l2_norm(x));
        for d in 0..depth {
            norms.alpha[d] = norms.alpha[d].max(linalg::l2_norm(trace.f(d)));
        }
        let mut mins = vec![0.0; depth + 1];
        let mut medians = vec![0.0; depth + 1];
        for d in 1..=depth {
            let mut abs: Vec<f64> = trace.g(d).iter().map(|v| v.abs()).collect();
            abs.sort_by(f64::total_cmp);
            mins[d] = abs[0];
            medians[d] = abs[abs.len() / 2];
            norms.gamma[d] = norms.gamma[d].min(abs[0]);
            for dp in 1..d {
                let j = table.get(dp, d);
                norms.zeta[dp][d] = norms.zeta[dp][d].max(max_row_l2(j)?);
                let spec = spectral_norm(j, PROFILE_SPECTRAL_TOL, linalg::DEFAULT_SPECTRAL_MAX_ITERS)?.value;
                norms.psi[dp][d] = norms.psi[dp][d].max(spec);
            }
        }
        norms.example_min_preact.push(mins);
        norms.example_median_preact.push(medians);
        let margin = crate::network::margin(trace.logits(), y)?;
        norms.gamma_class = norms.gamma_class.min(margin);
    }
    Ok(norms)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreactMode {
    /// Ignore the `⌊p·m⌋` examples with the smallest preactivation per layer.
    Pct { p: f64 },
    /// Ignore the smaller half of the units of each layer, per input.
    Median,
}

/// Norm profile with `γ*` recomputed under a preactivation variant.
pub fn preact_variant(norms: &TrainNorms, mode: PreactMode) -> Result<TrainNorms> {
    let mut out = norms.clone();
    for d in 1..=norms.depth {
        out.gamma[d] = match mode {
            PreactMode::Pct { p } => {
                if !(0.0..1.0).contains(&p) {
                    return invalid(format!("ignored fraction must lie in [0, 1), got {p}"));
                }
                let mut vals: Vec<f64> = norms.example_min_preact.iter().map(|e| e[d]).collect();
                vals.sort_by(f64::total_cmp);
                let drop = (p * norms.m as f64).floor() as usize;
                vals[drop.min(vals.len() - 1)]
            }
            PreactMode::Median => norms
                .example_median_preact
                .iter()
                .map(|e| e[d])
                .fold(f64::INFINITY, f64::min),
        };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BTerms {
    pub layer_l2: f64,
    pub preact: f64,
    pub jac_row_l2: f64,
    /// Absent from the cheaper bound, reported as 0 there.
    pub jac_spec: f64,
    pub output: f64,
}

impl BTerms {
    pub fn max(&self) -> f64 {
        self.layer_l2
            .max(self.preact)
            .max(self.jac_row_l2)
            .max(self.jac_spec)
            .max(self.output)
    }
}

fn div(term: &'static str, num: f64, den: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::DivisionByZero { term, detail: what() });
    }
    Ok(num / den)
}

/// `Σ_{d'=1}^{d} ζ*_{d'/d} α*_{d'-1}`.
fn layer_numerator(n: &TrainNorms, d: usize) -> f64 {
    (1..=d).map(|dp| n.zeta[dp][d] * n.alpha[dp - 1]).sum()
}

fn check_gamma_class(n: &TrainNorms, gamma_class: f64) -> Result<()> {
    if !(gamma_class > 0.0) {
        return Err(Error::DivisionByZero {
            term: "B_output",
            detail: format!("class margin {gamma_class} is not positive"),
        });
    }
    if n.depth == 0 {
        return invalid("depth 0");
    }
    Ok(())
}

/// The five B terms of the main bound.
pub fn b_terms(n: &TrainNorms, gamma_class: f64) -> Result<BTerms> {
    check_gamma_class(n, gamma_class)?;
    let depth = n.depth;
    let sqrt_h = (n.width as f64).sqrt();
    let mut t = BTerms { layer_l2: 0.0, preact: 0.0, jac_row_l2: 0.0, jac_spec: 0.0, output: 0.0 };
    for d in 1..depth {
        let num = layer_numerator(n, d);
        t.layer_l2 = t.layer_l2.max(num / n.alpha[d]);
        let p = div("B_preact", num, sqrt_h * n.gamma[d], || format!("gamma*_{d} = 0"))?;
        t.preact = t.preact.max(p);
    }
    for d in 2..=depth {
        for dp in 1..d {
            let row_sum: f64 = (dp + 1..d).map(|dpp| n.psi[dpp][d - 1] * n.zeta[dp][dpp - 1]).sum();
            let row = (n.zeta[dp][d - 1] + n.weight_row[d] * row_sum) / n.zeta[dp][d];
            t.jac_row_l2 = t.jac_row_l2.max(row);
            let spec_sum: f64 = (dp + 1..d).map(|dpp| n.psi[dpp][d - 1] * n.psi[dp][dpp - 1]).sum();
            let spec = (n.psi[dp][d - 1] + n.weight_spec[d] * spec_sum) / n.psi[dp][d];
            t.jac_spec = t.jac_spec.max(spec);
        }
    }
    let out_num: f64 = (1..=depth).map(|d| n.zeta[d][depth] * n.alpha[d - 1]).sum();
    t.output = out_num / (sqrt_h * gamma_class);
    Ok(t)
}

/// B terms of the cheaper bound: no spectral Jacobian term, and the row
/// term becomes `max Σ_{d''=d'+1}^{d} ζ*_{d''/d} ζ*_{d'/d''-1} / ζ*_{d'/d}`.
pub fn b_terms_cheap(n: &TrainNorms, gamma_class: f64) -> Result<BTerms> {
    let mut t = b_terms(n, gamma_class)?;
    t.jac_spec = 0.0;
    t.jac_row_l2 = 0.0;
    for d in 2..=n.depth {
        for dp in 1..d {
            let sum: f64 = (dp + 1..=d).map(|dpp| n.zeta[dpp][d] * n.zeta[dp][dpp - 1]).sum();
            t.jac_row_l2 = t.jac_row_l2.max(sum / n.zeta[dp][d]);
        }
    }
    Ok(t)
}

/// `σ* = 1 / (√H · √ln(DH√m) · max B)`.
pub fn sigma_star(terms: &BTerms, width: usize, depth: usize, m: usize) -> Result<f64> {
    let log = ((depth * width) as f64 * (m as f64).sqrt()).ln();
    if !(log > 0.0) {
        return invalid(format!("ln(DH√m) = {log} must be positive"));
    }
    let inv = (width as f64).sqrt() * log.sqrt() * terms.max();
    if !(inv > 0.0) {
        return invalid("all B terms vanish");
    }
    Ok(1.0 / inv)
}

/// `train + factor·√((2·dist²/σ*² + ln(Dm/δ)) / (m − 1))`.
pub fn bound_from_parts(train_term: f64, dist_sq: f64, sigma_star: f64, depth: usize, m: usize, delta: f64, factor: f64) -> Result<f64> {
    check_delta(delta)?;
    if m < 2 {
        return invalid("the bound needs m >= 2");
    }
    let radicand = (2.0 * dist_sq / (sigma_star * sigma_star) + (depth as f64 * m as f64 / delta).ln()) / (m as f64 - 1.0);
    Ok(train_term + factor * radicand.sqrt())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundVariant {
    Main,
    Cheap,
    PreactPct { p: f64 },
    PreactMedian,
}

/// Margin used for the class-output term and the empirical margin loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaClass {
    Fixed { value: f64 },
    MinTrainMargin,
}

impl Default for GammaClass {
    fn default() -> Self {
        GammaClass::Fixed { value: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub variant: BoundVariant,
    pub b_layer_l2: f64,
    pub b_preact: f64,
    pub b_jac_row_l2: f64,
    pub b_jac_spec: f64,
    pub b_output: f64,
    pub sigma_star: f64,
    /// `KL(N(W, σ*²I) ‖ N(Z, σ*²I))`.
    pub kl_term: f64,
    pub train_term: f64,
    pub gamma_class: f64,
    pub bound_value: f64,
    /// Set when some `γ*_d` is zero; the bound is then `+∞`.
    pub preact_zero: bool,
    pub vacuous: bool,
    pub constant_convention: String,
}

/// Evaluates one bound variant from a precomputed norm profile.
pub fn thesis_bound_from_norms(
    norms: &TrainNorms,
    dist_sq: f64,
    train_margins: &[f64],
    delta: f64,
    gamma_class: GammaClass,
    variant: BoundVariant,
) -> Result<BoundReport> {
    check_delta(delta)?;
    let gc = match gamma_class {
        GammaClass::Fixed { value } => value,
        GammaClass::MinTrainMargin => norms.gamma_class,
    };
    let train_term = train_margins
        .iter()
        .map(|&g| loss_margin(g, gc.max(0.0)))
        .sum::<Result<f64>>()?
        / train_margins.len().max(1) as f64;
    let adjusted;
    let profile = match variant {
        BoundVariant::PreactPct { p } => {
            adjusted = preact_variant(norms, PreactMode::Pct { p })?;
            &adjusted
        }
        BoundVariant::PreactMedian => {
            adjusted = preact_variant(norms, PreactMode::Median)?;
            &adjusted
        }
        _ => norms,
    };
    let terms = match variant {
        BoundVariant::Cheap => b_terms_cheap(profile, gc),
        _ => b_terms(profile, gc),
    };
    let depth = norms.depth;
    let factor = if variant == BoundVariant::Cheap { (depth * depth) as f64 } else { depth as f64 };
    let report = |terms: BTerms, sigma: f64, value: f64, zero: bool| BoundReport {
        variant,
        b_layer_l2: terms.layer_l2,
        b_preact: terms.preact,
        b_jac_row_l2: terms.jac_row_l2,
        b_jac_spec: terms.jac_spec,
        b_output: terms.output,
        sigma_star: sigma,
        kl_term: if sigma > 0.0 { dist_sq / (2.0 * sigma * sigma) } else { f64::INFINITY },
        train_term,
        gamma_class: gc,
        bound_value: value,
        preact_zero: zero,
        vacuous: value > 1.0,
        constant_convention: CONSTANT_CONVENTION.to_string(),
    };
    match terms {
        Ok(terms) => {
            let sigma = sigma_star(&terms, norms.width, depth, norms.m)?;
            let value = bound_from_parts(train_term, dist_sq, sigma, depth, norms.m, delta, factor)?;
            Ok(report(terms, sigma, value, false))
        }
        Err(Error::DivisionByZero { term: "B_preact", .. }) => {
            let mut terms = BTerms { layer_l2: 0.0, preact: f64::INFINITY, jac_row_l2: 0.0, jac_spec: 0.0, output: 0.0 };
            // Fill the finite terms for the report.
            let mut finite = profile.clone();
            finite.gamma.iter_mut().for_each(|g| *g = f64::INFINITY);
            if let Ok(t) = match variant {
                BoundVariant::Cheap => b_terms_cheap(&finite, gc),
                _ => b_terms(&finite, gc),
            } {
                terms = BTerms { preact: f64::INFINITY, ..t };
            }
            Ok(report(terms, 0.0, f64::INFINITY, true))
        }
        Err(e) => Err(e),
    }
}

/// The data-dependent bound with the norm profile of `data`.
pub fn thesis_bound(net: &Mlp<f64>, data: &LabeledDataset, delta: f64, gamma_class: GammaClass) -> Result<BoundReport> {
    let norms = train_norm_profile(net, data)?;
    let margins = net.margins(data.inputs(), data.labels())?;
    let dist = distance_from_init(net)?.0;
    thesis_bound_from_norms(&norms, dist * dist, &margins, delta, gamma_class, BoundVariant::Main)
}

pub fn thesis_bound_cheap(net: &Mlp<f64>, data: &LabeledDataset, delta: f64, gamma_class: GammaClass) -> Result<BoundReport> {
    let norms = train_norm_profile(net, data)?;
    let margins = net.margins(data.inputs(), data.labels())?;
    let dist = distance_from_init(net)?.0;
    thesis_bound_from_norms(&norms, dist * dist, &margins, delta, gamma_class, BoundVariant::Cheap)
}

/// Product of layer spectral norms.
pub fn spectral_product(net: &Mlp<f64>) -> Result<f64> {
    net.weights()
        .iter()
        .map(linalg::spectral_norm_default)
        .product::<Result<f64>>()
}

fn spectral_prefix(net: &Mlp<f64>, gamma: f64, m: usize, input_bound: f64, width: usize) -> Result<(f64, Vec<f64>)> {
    if !(gamma > 0.0) {
        return invalid(format!("margin must be positive, got {gamma}"));
    }
    if m == 0 {
        return invalid("m must be positive");
    }
    let specs = net
        .weights()
        .iter()
        .map(linalg::spectral_norm_default)
        .collect::<Result<Vec<_>>>()?;
    let depth = net.depth() as f64;
    let prefix = input_bound * depth * (width as f64).sqrt() / (gamma * (m as f64).sqrt()) * specs.iter().product::<f64>();
    Ok((prefix, specs))
}

/// `B·D·√H/(γ√m) · Π‖W_d‖₂ · √(Σ_d ‖W_d − Z_d‖_F² / ‖W_d‖₂²)`.
pub fn neyshabur18_bound(net: &Mlp<f64>, gamma: f64, m: usize, input_bound: f64, width: usize) -> Result<f64> {
    let (prefix, specs) = spectral_prefix(net, gamma, m, input_bound, width)?;
    let mut sum = 0.0;
    for ((w, z), s) in net.weights().iter().zip(net.init()).zip(&specs) {
        let f = frobenius_norm(&w.sub(z)?)?;
        sum += div("neyshabur18 dist", f * f, s * s, || "zero spectral norm".into())?;
    }
    Ok(prefix * sum.sqrt())
}

/// `B·D·√H/(γ√m) · Π‖W_d‖₂ · (1/(D√H)) (Σ_d (‖W_d − Z_d‖_{2,1}/‖W_d‖₂)^{2/3})^{3/2}`.
pub fn bartlett17_bound(
    net: &Mlp<f64>,
    gamma: f64,
    m: usize,
    input_bound: f64,
    width: usize,
    convention: Norm21Convention,
) -> Result<f64> {
    let (prefix, specs) = spectral_prefix(net, gamma, m, input_bound, width)?;
    let mut sum = 0.0;
    for ((w, z), s) in net.weights().iter().zip(net.init()).zip(&specs) {
        let n21 = norm_2_1_with(&w.sub(z)?, convention)?;
        sum += div("bartlett17 dist", n21, *s, || "zero spectral norm".into())?.powf(2.0 / 3.0);
    }
    let dist = sum.powf(1.5) / (net.depth() as f64 * (width as f64).sqrt());
    Ok(prefix * dist)
}

/// `‖W₂‖_F (‖W₁ − Z₁‖_F + ‖Z₁‖₂)/(γ√m) + √H/√m` for one hidden layer.
pub fn neyshabur_twolayer_bound(net: &Mlp<f64>, gamma: f64, m: usize, width: usize) -> Result<f64> {
    if net.depth() != 2 {
        return invalid(format!("two-layer bound needs depth 2, got {}", net.depth()));
    }
    if !(gamma > 0.0) {
        return invalid(format!("margin must be positive, got {gamma}"));
    }
    if m == 0 {
        return invalid("m must be positive");
    }
    let (w1, w2) = (net.weight(1), net.weight(2));
    let z1 = &net.init()[0];
    let sm = (m as f64).sqrt();
    let first = frobenius_norm(w2)? * (frobenius_norm(&w1.sub(z1)?)? + linalg::spectral_norm_default(z1)?) / (gamma * sm);
    Ok(first + (width as f64).sqrt() / sm)
}

/// `train + μ̂_S + μ_D + 2√((2·KL + ln(2m/δ))/(m − 1)) + 2/(√m − 1)`.
pub fn derandomized_bound(train_margin_rate: f64, mu_s: f64, mu_d: f64, kl: f64, m: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if m < 2 {
        return invalid("the derandomized bound needs m >= 2");
    }
    if kl < 0.0 {
        return invalid("KL must be >= 0");
    }
    let mf = m as f64;
    Ok(train_margin_rate + mu_s + mu_d + 2.0 * ((2.0 * kl + (2.0 * mf / delta).ln()) / (mf - 1.0)).sqrt() + 2.0 / (mf.sqrt() - 1.0))
}

/// `train + R·√((2·KL + ln(2mR/δ))/(m − 1))`.
pub fn generic_framework_bound(train_term: f64, kl: f64, m: usize, delta: f64, r: usize) -> Result<f64> {
    check_delta(delta)?;
    if m < 2 {
        return invalid("the bound needs m >= 2");
    }
    if r == 0 {
        return invalid("R must be at least 1");
    }
    if kl < 0.0 {
        return invalid("KL must be >= 0");
    }
    let (mf, rf) = (m as f64, r as f64);
    Ok(train_term + rf * ((2.0 * kl + (2.0 * mf * rf / delta).ln()) / (mf - 1.0)).sqrt())
}
