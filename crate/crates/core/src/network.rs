//! Biasless fully-connected ReLU classifiers: forward traces, margins,
//! losses, inter-layer Jacobians, gradients and the binary checkpoint format.
//!
//! Layers are numbered from 1 to `D`. `g^d = W_d f^{d-1}` is the
//! preactivation of layer `d`, `f^d = ReLU(g^d)` its output, `f^0 = x` and
//! the logits are `g^D`. A unit whose preactivation is exactly zero is
//! inactive.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::Label;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GLAB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    weights: Vec<Matrix<T>>,
    init: Vec<Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    /// `preacts[d - 1] = g^d` for `d = 1..=D`.
    pub preacts: Vec<Vec<T>>,
    /// `activations[d] = f^d` for `d = 0..D`.
    pub activations: Vec<Vec<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn depth(&self) -> usize {
        self.preacts.len()
    }

    /// `g^d`, `1 <= d <= D`.
    pub fn g(&self, d: usize) -> &[T] {
        &self.preacts[d - 1]
    }

    /// `f^d`, `0 <= d < D`.
    pub fn f(&self, d: usize) -> &[T] {
        &self.activations[d]
    }

    pub fn logits(&self) -> &[T] {
        self.preacts.last().expect("depth >= 1")
    }

    /// Activation pattern of hidden layer `d`, `1 <= d < D`.
    pub fn mask(&self, d: usize) -> Vec<bool> {
        self.g(d).iter().map(|&v| v > T::zero()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy; logistic loss for a single binary logit.
    CrossEntropy,
    /// `(1/K) Σ_k (f_k − t_k)²` against the one-hot target (`t = y` for a
    /// single binary logit).
    Squared,
    /// `−y·f(x)`: gradient ascent on the signed output. Binary only.
    MarginAscent,
}

impl<T: Real> Mlp<T> {
    /// Network with explicit weights. The initialization snapshot is a copy
    /// of the given weights.
    pub fn from_weights(weights: Vec<Matrix<T>>) -> Result<Self> {
        let init = weights.clone();
        Self::from_parts(weights, init)
    }

    pub fn from_parts(weights: Vec<Matrix<T>>, init: Vec<Matrix<T>>) -> Result<Self> {
        if weights.is_empty() {
            return invalid("network needs at least one layer");
        }
        if weights.len() != init.len() {
            return invalid("initialization snapshot has a different depth");
        }
        let mut widths = vec![weights[0].cols()];
        for (d, w) in weights.iter().enumerate() {
            if w.cols() != *widths.last().unwrap() {
                return invalid(format!(
                    "layer {} expects input width {}, previous layer outputs {}",
                    d + 1,
                    w.cols(),
                    widths.last().unwrap()
                ));
            }
            if w.rows() == 0 || w.cols() == 0 {
                return invalid(format!("layer {} has an empty weight matrix", d + 1));
            }
            widths.push(w.rows());
        }
        for (d, (w, z)) in weights.iter().zip(&init).enumerate() {
            if w.shape() != z.shape() {
                return invalid(format!("snapshot of layer {} has the wrong shape", d + 1));
            }
        }
        Ok(Self { widths, weights, init })
    }

    /// Xavier-style initialization: entries of `W_d` are `N(0, (c/√fan_in)²)`.
    pub fn xavier(widths: &[usize], c: f64, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return invalid("widths must list the input and at least one layer");
        }
        if widths.contains(&0) {
            return invalid("zero-width layer");
        }
        let weights = widths
            .windows(2)
            .map(|w| linalg::sample_gaussian_matrix(w[1], w[0], c / (w[0] as f64).sqrt(), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_weights(weights)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `[N, H_1, …, H_{D-1}, K]`.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `H`: the largest output width over all layers.
    pub fn max_width(&self) -> usize {
        self.widths[1..].iter().copied().max().unwrap()
    }

    pub fn is_binary(&self) -> bool {
        self.output_dim() == 1
    }

    /// `W_d`, `1 <= d <= D`.
    pub fn weight(&self, d: usize) -> &Matrix<T> {
        &self.weights[d - 1]
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.weights
    }

    /// Initialization snapshot `Z_1..Z_D`.
    pub fn init(&self) -> &[Matrix<T>] {
        &self.init
    }

    pub fn set_init(&mut self, init: Vec<Matrix<T>>) -> Result<()> {
        let checked = Self::from_parts(self.weights.clone(), init)?;
        self.init = checked.init;
        Ok(())
    }

    pub fn convert<U: Real>(&self) -> Mlp<U> {
        Mlp {
            widths: self.widths.clone(),
            weights: self.weights.iter().map(Matrix::convert).collect(),
            init: self.init.iter().map(Matrix::convert).collect(),
        }
    }

    /// `(1 − t)·self + t·other`, for both weights and snapshots.
    pub fn lerp(&self, other: &Self, t: T) -> Result<Self> {
        if self.widths != other.widths {
            return invalid("interpolating networks of different shapes");
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.lerp(b, t))
            .collect::<Result<Vec<_>>>()?;
        let init = self
            .init
            .iter()
            .zip(&other.init)
            .map(|(a, b)| a.lerp(b, t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(weights, init)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return invalid(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let depth = self.depth();
        let mut preacts = Vec::with_capacity(depth);
        let mut activations = Vec::with_capacity(depth);
        activations.push(x.to_vec());
        for d in 1..=depth {
            let g = self.weight(d).matvec(&activations[d - 1])?;
            if d < depth {
                activations.push(g.iter().map(|&v| relu(v)).collect());
            }
            preacts.push(g);
        }
        Ok(ForwardTrace { input: x.to_vec(), preacts, activations })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for d in 1..=self.depth() {
            h = self.weight(d).matvec(&h)?;
            if d < self.depth() {
                h.iter_mut().for_each(|v| *v = relu(*v));
            }
        }
        Ok(h)
    }

    /// Logits for a batch of inputs, one row per input.
    pub fn forward_batch(&self, xs: &[Vec<T>]) -> Result<Matrix<T>> {
        let mut h = batch_matrix(xs, self.input_dim())?;
        for d in 1..=self.depth() {
            h = h.matmul(&self.weight(d).transpose())?;
            if d < self.depth() {
                h.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
            }
        }
        Ok(h)
    }

    pub fn margin_at(&self, x: &[T], y: Label) -> Result<T> {
        margin(&self.forward(x)?, y)
    }

    /// Margins of a whole dataset.
    pub fn margins(&self, xs: &[Vec<T>], ys: &[Label]) -> Result<Vec<T>> {
        if xs.len() != ys.len() {
            return invalid("inputs and labels differ in length");
        }
        let logits = self.forward_batch(xs)?;
        ys.iter()
            .enumerate()
            .map(|(i, &y)| margin(logits.row(i), y))
            .collect()
    }

    /// Fraction of examples with negative margin.
    pub fn error_rate(&self, xs: &[Vec<T>], ys: &[Label]) -> Result<f64> {
        if xs.is_empty() {
            return invalid("error rate of an empty dataset");
        }
        let margins = self.margins(xs, ys)?;
        let errors = margins.iter().filter(|&&g| g < T::zero()).count();
        Ok(errors as f64 / xs.len() as f64)
    }

    /// Predicted labels: argmax with the lowest index winning ties, or the
    /// sign of a single binary logit (`+1` at zero).
    pub fn predict_batch(&self, xs: &[Vec<T>]) -> Result<Vec<Label>> {
        let logits = self.forward_batch(xs)?;
        Ok((0..logits.rows()).map(|i| predict_from_logits(logits.row(i))).collect())
    }

    /// Mean loss and its gradient with respect to every `W_d` over a batch.
    pub fn backprop_grad(&self, xs: &[&[T]], ys: &[Label], kind: LossKind) -> Result<(T, Vec<Matrix<T>>)> {
        if xs.is_empty() {
            return invalid("gradient of an empty batch");
        }
        if xs.len() != ys.len() {
            return invalid("inputs and labels differ in length");
        }
        if kind == LossKind::MarginAscent && !self.is_binary() {
            return invalid("margin-ascent loss needs a single binary logit");
        }
        let depth = self.depth();
        let n = xs.len();
        let mut x = Matrix::zeros(n, self.input_dim());
        for (i, xi) in xs.iter().enumerate() {
            self.check_input(xi)?;
            x.row_mut(i).copy_from_slice(xi);
        }
        // acts[d] = f^d for d < D; the last entry is the logits.
        let mut acts = vec![x];
        for d in 1..=depth {
            let mut h = acts[d - 1].matmul(&self.weight(d).transpose())?;
            if d < depth {
                h.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
            }
            acts.push(h);
        }
        let logits = acts.pop().unwrap();
        let k = self.output_dim();
        let mut delta = Matrix::zeros(n, k);
        let mut total = T::zero();
        let inv_n = T::one() / T::of_usize(n);
        for (i, &y) in ys.iter().enumerate() {
            let (loss, grad) = loss_and_grad(logits.row(i), y, kind)?;
            total = total + loss;
            for (dst, g) in delta.row_mut(i).iter_mut().zip(grad) {
                *dst = g * inv_n;
            }
        }
        let mut grads = vec![Matrix::zeros(0, 0); depth];
        for d in (1..=depth).rev() {
            grads[d - 1] = delta.matmul_transa(&acts[d - 1])?;
            if d > 1 {
                let mut next = delta.matmul(self.weight(d))?;
                for (v, &a) in next.as_mut_slice().iter_mut().zip(acts[d - 1].as_slice()) {
                    if a <= T::zero() {
                        *v = T::zero();
                    }
                }
                delta = next;
            }
        }
        Ok((total * inv_n, grads))
    }

    /// Mean loss over a dataset without gradients.
    pub fn mean_loss(&self, xs: &[Vec<T>], ys: &[Label], kind: LossKind) -> Result<T> {
        if xs.is_empty() {
            return invalid("loss of an empty dataset");
        }
        if kind == LossKind::MarginAscent && !self.is_binary() {
            return invalid("margin-ascent loss needs a single binary logit");
        }
        let logits = self.forward_batch(xs)?;
        let mut total = T::zero();
        for (i, &y) in ys.iter().enumerate() {
            total = total + loss_and_grad(logits.row(i), y, kind)?.0;
        }
        Ok(total / T::of_usize(xs.len()))
    }

    /// `J^{d_to/d_from} = ∂g^{d_to}/∂g^{d_from}` on the activation pattern of `trace`.
    pub fn interlayer_jacobian(&self, trace: &ForwardTrace<T>, d_from: usize, d_to: usize) -> Result<Matrix<T>> {
        if trace.depth() != self.depth() {
            return invalid("trace comes from a network of different depth");
        }
        if d_from < 1 || d_from > d_to || d_to > self.depth() {
            return invalid(format!(
                "need 1 <= d_from <= d_to <= {}, got d_from={d_from} d_to={d_to}",
                self.depth()
            ));
        }
        let mut j = Matrix::identity(self.widths[d_from]);
        for d in d_from + 1..=d_to {
            j = self.weight(d).mask_columns(&trace.mask(d - 1)).matmul(&j)?;
        }
        Ok(j)
    }

    /// Every Jacobian `J^{d/d'}` for `1 <= d' <= d <= D` on one trace.
    pub fn jacobian_table(&self, trace: &ForwardTrace<T>) -> Result<JacobianTable<T>> {
        let depth = self.depth();
        if trace.depth() != depth {
            return invalid("trace comes from a network of different depth");
        }
        let masked: Vec<Matrix<T>> = (2..=depth)
            .map(|d| self.weight(d).mask_columns(&trace.mask(d - 1)))
            .collect();
        let mut mats = Vec::with_capacity(depth * (depth + 1) / 2);
        for d_from in 1..=depth {
            let mut j = Matrix::identity(self.widths[d_from]);
            mats.push(j.clone());
            for d in d_from + 1..=depth {
                j = masked[d - 2].matmul(&j)?;
                mats.push(j.clone());
            }
        }
        Ok(JacobianTable { depth, mats })
    }
}

/// Jacobians `J^{d/d'}` of one input, indexed by `(d_from, d_to)`.
#[derive(Clone, Debug)]
pub struct JacobianTable<T> {
    depth: usize,
    mats: Vec<Matrix<T>>,
}

impl<T: Real> JacobianTable<T> {
    fn offset(&self, d_from: usize) -> usize {
        // Rows for d' = 1..d_from-1 hold D, D-1, … entries.
        (d_from - 1) * (self.depth + 1) - (d_from - 1) * d_from / 2
    }

    /// `J^{d_to/d_from}`, `1 <= d_from <= d_to <= D`.
    pub fn get(&self, d_from: usize, d_to: usize) -> &Matrix<T> {
        assert!(1 <= d_from && d_from <= d_to && d_to <= self.depth);
        &self.mats[self.offset(d_from) + d_to - d_from]
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn batch_matrix<T: Real>(xs: &[Vec<T>], dim: usize) -> Result<Matrix<T>> {
    let mut x = Matrix::zeros(xs.len(), dim);
    for (i, xi) in xs.iter().enumerate() {
        if xi.len() != dim {
            return invalid(format!("input {i} has dimension {}, network expects {dim}", xi.len()));
        }
        x.row_mut(i).copy_from_slice(xi);
    }
    Ok(x)
}

pub fn predict_from_logits<T: Real>(logits: &[T]) -> Label {
    if logits.len() == 1 {
        return if logits[0] >= T::zero() { 1 } else { -1 };
    }
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = k;
        }
    }
    best as Label
}

fn check_label(k: usize, y: Label) -> Result<()> {
    if k == 1 {
        if y != 1 && y != -1 {
            return invalid(format!("binary label must be -1 or +1, got {y}"));
        }
    } else if y < 0 || y as usize >= k {
        return invalid(format!("label {y} out of range for {k} classes"));
    }
    Ok(())
}

/// `Γ(f, y)`: `f[y] − max_{k≠y} f[k]`, or `f·y` for a single binary logit.
pub fn margin<T: Real>(logits: &[T], y: Label) -> Result<T> {
    if logits.is_empty() {
        return invalid("empty logit vector");
    }
    check_label(logits.len(), y)?;
    if logits.len() == 1 {
        return Ok(logits[0] * T::of(y as f64));
    }
    let y = y as usize;
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    Ok(logits[y] - runner_up)
}

pub fn loss_zero_one<T: Real>(margin: T) -> T {
    if margin < T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn loss_margin<T: Real>(margin: T, gamma: T) -> Result<T> {
    if !(gamma >= T::zero()) {
        return invalid("margin loss needs gamma >= 0");
    }
    if gamma == T::zero() {
        return Ok(loss_zero_one(margin));
    }
    Ok(if margin < gamma { T::one() } else { T::zero() })
}

pub fn loss_ramp<T: Real>(margin: T, gamma: T) -> Result<T> {
    if !(gamma >= T::zero()) {
        return invalid("ramp loss needs gamma >= 0");
    }
    if gamma == T::zero() {
        return Ok(loss_zero_one(margin));
    }
    Ok(if margin < T::zero() {
        T::one()
    } else if margin <= gamma {
        T::one() - margin / gamma
    } else {
        T::zero()
    })
}

/// Loss at one example and its derivative with respect to the logits.
fn loss_and_grad<T: Real>(logits: &[T], y: Label, kind: LossKind) -> Result<(T, Vec<T>)> {
    let k = logits.len();
    check_label(k, y)?;
    let two = T::of(2.0);
    if k == 1 {
        let f = logits[0];
        let yf = T::of(y as f64);
        return Ok(match kind {
            LossKind::Squared => ((f - yf) * (f - yf), vec![two * (f - yf)]),
            LossKind::CrossEntropy => {
                let z = -yf * f;
                // ln(1 + e^z) and its derivative σ(z), both stable.
                let loss = if z > T::zero() {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                let sig = if z >= T::zero() {
                    T::one() / (T::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (T::one() + e)
                };
                (loss, vec![-yf * sig])
            }
            LossKind::MarginAscent => (-yf * f, vec![-yf]),
        });
    }
    let y = y as usize;
    match kind {
        LossKind::Squared => {
            let kk = T::of_usize(k);
            let mut loss = T::zero();
            let mut grad = Vec::with_capacity(k);
            for (j, &f) in logits.iter().enumerate() {
                let t = if j == y { T::one() } else { T::zero() };
                loss = loss + (f - t) * (f - t);
                grad.push(two * (f - t) / kk);
            }
            Ok((loss / kk, grad))
        }
        LossKind::CrossEntropy => {
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = logits.iter().map(|&f| (f - max).exp()).collect();
            let sum: T = exps.iter().copied().sum();
            let loss = sum.ln() + max - logits[y];
            let grad = exps
                .iter()
                .enumerate()
                .map(|(j, &e)| e / sum - if j == y { T::one() } else { T::zero() })
                .collect();
            Ok((loss, grad))
        }
        LossKind::MarginAscent => invalid("margin-ascent loss needs a single binary logit"),
    }
}

/// Writes `GLAB`, the version, `D`, the `D + 1` widths (all `u32`
/// little-endian), then every `W_d` and every `Z_d` as little-endian `f64`
/// in row-major order.
pub fn write_checkpoint<W: Write>(net: &Mlp<f64>, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(net.depth() as u32).to_le_bytes())?;
    for &w in net.widths() {
        out.write_all(&(w as u32).to_le_bytes())?;
    }
    for m in net.weights().iter().chain(net.init()) {
        for &v in m.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(net: &Mlp<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).expect("writing to memory cannot fail");
    buf
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Format {
            offset: self.offset,
            message: format!("reading {what}: {e}"),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Mlp<f64>> {
    let mut r = CountingReader { inner: input, offset: 0 };
    let magic = r.take::<4>("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let depth_offset = r.offset;
    let depth = r.u32("depth")? as usize;
    if depth == 0 {
        return Err(Error::Format { offset: depth_offset, message: "depth 0".into() });
    }
    let mut widths = Vec::with_capacity(depth + 1);
    for _ in 0..=depth {
        let at = r.offset;
        let w = r.u32("width")? as usize;
        if w == 0 {
            return Err(Error::Format { offset: at, message: "zero width".into() });
        }
        widths.push(w);
    }
    let mut mats = Vec::with_capacity(2 * depth);
    for pass in 0..2 {
        for d in 0..depth {
            let (rows, cols) = (widths[d + 1], widths[d]);
            let what = if pass == 0 { "weights" } else { "snapshot" };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(r.take::<8>(what)?));
            }
            mats.push(Matrix::from_vec(rows, cols, data)?);
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Format { offset: r.offset, message: "trailing bytes".into() });
    }
    let init = mats.split_off(depth);
    Mlp::from_parts(mats, init)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net3(seed: u64) -> Mlp<f64> {
        Mlp::xavier(&[4, 5, 3, 2], 1.0, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn one_layer_is_matvec() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let net = Mlp::from_weights(vec![w]).unwrap();
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![-1.0, -3.5]);
    }

    #[test]
    fn nonnegative_weights_never_clip() {
        let w1 = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let net = Mlp::from_weights(vec![w1.clone(), w2.clone()]).unwrap();
        let x = [0.25, 1.5];
        let direct = w2.matvec(&w1.matvec(&x).unwrap()).unwrap();
        assert_eq!(net.forward(&x).unwrap(), direct);
    }

    #[test]
    fn trace_matches_naive_recomputation() {
        let net = net3(1);
        let x = [0.3, -1.2, 0.8, 2.0];
        let trace = net.forward_trace(&x).unwrap();
        let mut f = x.to_vec();
        for d in 1..=3 {
            let w = net.weight(d);
            let mut g = vec![0.0; w.rows()];
            for (i, gi) in g.iter_mut().enumerate() {
                for j in 0..w.cols() {
                    *gi += w[(i, j)] * f[j];
                }
            }
            assert_eq!(trace.f(d - 1), &f[..]);
            assert_eq!(trace.g(d).len(), g.len());
            assert_eq!(trace.g(d), &g[..]);
            f = g.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        }
        assert_eq!(trace.logits(), &net.forward(&x).unwrap()[..]);
        let batch = net.forward_batch(&[x.to_vec()]).unwrap();
        assert_eq!(batch.row(0), trace.logits());
    }

    #[test]
    fn input_dimension_checked() {
        assert!(net3(1).forward_trace(&[1.0]).is_err());
    }

    #[test]
    fn margin_cases() {
        assert_eq!(margin(&[2.0, -1.0, 0.0], 0).unwrap(), 2.0);
        assert_eq!(margin(&[-1.5], -1).unwrap(), 1.5);
        assert_eq!(margin(&[0.0, 0.0], 1).unwrap(), 0.0);
        assert!(margin(&[0.0, 0.0], 2).is_err());
        assert!(margin(&[0.0], 0).is_err());
    }

    #[test]
    fn loss_cases() {
        assert_eq!(loss_zero_one(-0.1), 1.0);
        assert_eq!(loss_margin(-0.1, 1.0).unwrap(), 1.0);
        assert_eq!(loss_ramp(-0.1, 1.0).unwrap(), 1.0);
        assert_eq!(loss_zero_one(0.5), 0.0);
        assert_eq!(loss_margin(0.5, 1.0).unwrap(), 1.0);
        assert_eq!(loss_ramp(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(loss_zero_one(2.0), 0.0);
        assert_eq!(loss_margin(2.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_ramp(2.0, 1.0).unwrap(), 0.0);
        assert!(loss_ramp(0.0, -1.0).is_err());
        assert!(loss_margin(0.0, -1.0).is_err());
        assert_eq!(loss_ramp(0.3, 0.0).unwrap(), 0.0);
        assert_eq!(loss_margin(-0.3, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn jacobian_trivial_cases() {
        let net = net3(2);
        let trace = net.forward_trace(&[1.0, 0.0, -1.0, 0.5]).unwrap();
        assert_eq!(net.interlayer_jacobian(&trace, 2, 2).unwrap(), Matrix::identity(3));
        assert!(net.interlayer_jacobian(&trace, 3, 2).is_err());
        assert!(net.interlayer_jacobian(&trace, 0, 2).is_err());

        let w1 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let two = Mlp::from_weights(vec![w1, w2.clone()]).unwrap();
        let t = two.forward_trace(&[1.0, 1.0]).unwrap();
        assert_eq!(two.interlayer_jacobian(&t, 1, 2).unwrap(), w2);
    }

    #[test]
    fn jacobian_table_matches_direct() {
        let net = Mlp::xavier(&[3, 6, 6, 6, 2], 1.0, &mut Rng::new(8)).unwrap();
        let trace = net.forward_trace(&[0.5, -0.2, 1.0]).unwrap();
        let table = net.jacobian_table(&trace).unwrap();
        for a in 1..=4 {
            for b in a..=4 {
                assert_eq!(table.get(a, b), &net.interlayer_jacobian(&trace, a, b).unwrap());
            }
        }
    }

    #[test]
    fn squared_gradient_at_zero_weights() {
        // f = W x with W = 0: ∂/∂W (1/K)Σ(f − t)² = (2/K)(f − t) xᵀ = −(2/K) t xᵀ.
        let net = Mlp::<f64>::from_weights(vec![Matrix::zeros(3, 2)]).unwrap();
        let x = [0.5, -2.0];
        let (loss, grads) = net.backprop_grad(&[&x], &[1], LossKind::Squared).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-15);
        let g = &grads[0];
        for i in 0..3 {
            for j in 0..2 {
                let t = if i == 1 { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - (-2.0 / 3.0) * t * x[j]).abs() < 1e-15);
            }
        }
    }

    fn fd_check(net: &Mlp<f64>, xs: &[Vec<f64>], ys: &[Label], kind: LossKind) {
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (_, grads) = net.backprop_grad(&refs, ys, kind).unwrap();
        let h = 1e-6;
        for d in 0..net.depth() {
            for idx in 0..grads[d].as_slice().len() {
                let mut plus = net.clone();
                plus.weights_mut()[d].as_mut_slice()[idx] += h;
                let mut minus = net.clone();
                minus.weights_mut()[d].as_mut_slice()[idx] -= h;
                let fd = (plus.mean_loss(xs, ys, kind).unwrap() - minus.mean_loss(xs, ys, kind).unwrap()) / (2.0 * h);
                let an = grads[d].as_slice()[idx];
                let scale = an.abs().max(fd.abs()).max(1e-3);
                assert!((an - fd).abs() / scale < 1e-6, "layer {d} idx {idx}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(12);
        let net = Mlp::xavier(&[3, 3, 3], 1.0, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(3, 1.0)).collect();
        let ys = vec![0, 2, 1, 1, 0];
        fd_check(&net, &xs, &ys, LossKind::Squared);
        fd_check(&net, &xs, &ys, LossKind::CrossEntropy);

        let bin = Mlp::xavier(&[3, 3, 1], 1.0, &mut rng).unwrap();
        let yb = vec![1, -1, -1, 1, 1];
        fd_check(&bin, &xs, &yb, LossKind::Squared);
        fd_check(&bin, &xs, &yb, LossKind::CrossEntropy);
        fd_check(&bin, &xs, &yb, LossKind::MarginAscent);
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let net = net3(4);
        let a = [0.1, 0.2, -0.3, 0.4];
        let b = [1.0, -1.0, 0.5, 0.0];
        let (l1, g1) = net.backprop_grad(&[&a, &b], &[0, 1], LossKind::CrossEntropy).unwrap();
        let (l2, g2) = net
            .backprop_grad(&[&a, &b, &a, &b], &[0, 1, 0, 1], LossKind::CrossEntropy)
            .unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (x, y) in g1.iter().zip(&g2) {
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn margin_ascent_rejects_multiclass() {
        let net = net3(5);
        let x = [0.0; 4];
        assert!(net.backprop_grad(&[&x], &[0], LossKind::MarginAscent).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = net3(6);
        net.weights_mut()[1].as_mut_slice()[0] = 42.0;
        let bytes = checkpoint_bytes(&net);
        assert_eq!(&bytes[..4], b"GLAB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        let expected_len = 12 + 4 * 4 + 2 * 8 * (4 * 5 + 5 * 3 + 3 * 2);
        assert_eq!(bytes.len(), expected_len);
        let back = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn checkpoint_errors_carry_offsets() {
        let bytes = checkpoint_bytes(&net3(7));
        match read_checkpoint(&bytes[..30]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(read_checkpoint(&long[..]), Err(Error::Format { .. })));
    }
}
