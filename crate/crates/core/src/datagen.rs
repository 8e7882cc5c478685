//! Labeled datasets: the synthetic linear, exponential and hypersphere
//! setups with their bad datasets `S′`, label corruption, IDX loading and
//! CSV round-tripping.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::Label;

pub const C1: f64 = 1.0 / 2048.0;

pub fn c2() -> f64 {
    (15.0f64 / 16.0).sqrt()
}

pub fn c3() -> f64 {
    (17.0f64 / 16.0).sqrt()
}

pub fn c4() -> f64 {
    2f64.sqrt()
}

/// How labels are encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    /// `-1`/`+1`, paired with a single output logit.
    Binary,
    /// `0..K`, paired with `K` output logits.
    Multiclass(usize),
}

impl LabelSpace {
    pub fn contains(self, y: Label) -> bool {
        match self {
            LabelSpace::Binary => y == 1 || y == -1,
            LabelSpace::Multiclass(k) => y >= 0 && (y as usize) < k,
        }
    }

    /// Number of output logits a network needs.
    pub fn output_dim(self) -> usize {
        match self {
            LabelSpace::Binary => 1,
            LabelSpace::Multiclass(k) => k,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            LabelSpace::Binary => 2,
            LabelSpace::Multiclass(k) => k,
        }
    }

    /// The `i`-th class in a fixed enumeration of the label space.
    pub fn class(self, i: usize) -> Label {
        match self {
            LabelSpace::Binary => {
                if i == 0 {
                    -1
                } else {
                    1
                }
            }
            LabelSpace::Multiclass(_) => i as Label,
        }
    }

    /// Inverse of [`LabelSpace::class`].
    pub fn index(self, y: Label) -> usize {
        match self {
            LabelSpace::Binary => usize::from(y == 1),
            LabelSpace::Multiclass(_) => y as usize,
        }
    }

    pub fn uniform(self, rng: &mut Rng) -> Label {
        self.class(rng.below(self.num_classes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMeta {
    /// `x = (2y·u, x₂)` with `u ∈ R^K`, `x₂ ∈ R^N`.
    Linear { u: Vec<f64>, k: usize, n: usize },
    /// `x = (y·u, x₂)` with `u, x₂ ∈ R^N`.
    Exp { u: Vec<f64>, n: usize },
    /// Class 0 on the inner sphere, class 1 on the outer one.
    Hypersphere { r_in: f64, r_out: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T = f64> {
    inputs: Vec<Vec<T>>,
    labels: Vec<Label>,
    space: LabelSpace,
    meta: Option<ScenarioMeta>,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, labels: Vec<Label>, space: LabelSpace) -> Result<Self> {
        Self::with_meta(inputs, labels, space, None)
    }

    pub fn with_meta(
        inputs: Vec<Vec<T>>,
        labels: Vec<Label>,
        space: LabelSpace,
        meta: Option<ScenarioMeta>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            ));
        }
        if let LabelSpace::Multiclass(k) = space {
            if k < 2 {
                return invalid("multiclass label space needs at least two classes");
            }
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return invalid("inputs of different dimensions");
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| !space.contains(y)) {
            return invalid(format!("label {y} outside {space:?}"));
        }
        Ok(Self { inputs, labels, space, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn space(&self) -> LabelSpace {
        self.space
    }

    pub fn meta(&self) -> Option<&ScenarioMeta> {
        self.meta.as_ref()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("index {i} out of range for {} examples", self.len()));
        }
        Ok(Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            space: self.space,
            meta: self.meta.clone(),
        })
    }

    /// First `n` examples after a seeded shuffle.
    pub fn shuffled_subset(&self, n: usize, rng: &mut Rng) -> Result<Self> {
        if n > self.len() {
            return invalid(format!("subset of {n} from {} examples", self.len()));
        }
        let mut idx = rng.permutation(self.len());
        idx.truncate(n);
        self.subset(&idx)
    }

    pub fn convert<U: Real>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            inputs: self
                .inputs
                .iter()
                .map(|x| x.iter().map(|v| U::of(v.to_f64_lossy())).collect())
                .collect(),
            labels: self.labels.clone(),
            space: self.space,
            meta: self.meta.clone(),
        }
    }

    /// Export with header `x0,…,x{d-1},label`; values carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim() {
            let _ = write!(out, "x{j},");
        }
        out.push_str("label\n");
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            for v in x {
                let _ = write!(out, "{:.16e},", v.to_f64_lossy());
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }
}

impl LabeledDataset<f64> {
    /// Parses the CSV export. Labels drawn only from `{-1, +1}` read back as
    /// binary, anything else as `0..=max_label`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format {
            offset: 0,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let dim = cols.len() - 1;
        let header_ok = cols.last() == Some(&"label")
            && cols[..dim].iter().enumerate().all(|(j, c)| *c == format!("x{j}"));
        if !header_ok {
            return Err(Error::Format { offset: 0, message: format!("bad header {header:?}") });
        }
        let mut offset = header.len() as u64 + 1;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for line in lines {
            if line.is_empty() {
                offset += 1;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Format {
                    offset,
                    message: format!("expected {} fields, got {}", dim + 1, fields.len()),
                });
            }
            let bad = |f: &str| Error::Format { offset, message: format!("unparsable field {f:?}") };
            let x = fields[..dim]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
                .collect::<Result<Vec<_>>>()?;
            let y: Label = fields[dim].parse().map_err(|_| bad(fields[dim]))?;
            inputs.push(x);
            labels.push(y);
            offset += line.len() as u64 + 1;
        }
        let binary = labels.iter().all(|&y| y == 1 || y == -1) && labels.contains(&-1);
        let space = if binary {
            LabelSpace::Binary
        } else {
            let max = labels.iter().copied().max().unwrap_or(1).max(1);
            LabelSpace::Multiclass(max as usize + 1)
        };
        Self::new(inputs, labels, space)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSetupParams {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl LinearSetupParams {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, k: 2, n }
    }
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid(format!("epsilon must lie in (0, 1), got {eps}"));
    }
    if !(delta > 0.0) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    if delta >= 0.25 {
        return invalid(format!("the setup requires delta < 1/4, got {delta}"));
    }
    Ok(())
}

/// `(4 c4 c3 / c2²)²`.
pub fn linear_condition_factor() -> f64 {
    (4.0 * c4() * c3() / (c2() * c2())).powi(2)
}

/// Smallest `N` satisfying all three width conditions of the linear setup.
pub fn linear_min_n(m: usize, eps: f64, delta: f64) -> Result<f64> {
    check_eps_delta(eps, delta)?;
    if m == 0 {
        return invalid("m must be positive");
    }
    let m = m as f64;
    let f = linear_condition_factor();
    let d1 = (6.0 * m / delta).ln() / C1;
    let d2 = m * f * (6.0 * m / delta).ln();
    let d3 = m * f * 2.0 * (2.0 / eps).ln();
    Ok(d1.max(d2).max(d3))
}

pub fn linear_conditions(params: LinearSetupParams, eps: f64, delta: f64) -> Result<bool> {
    Ok(params.n as f64 >= linear_min_n(params.m, eps, delta)?)
}

/// The linear distribution with its direction `u` fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSetup {
    pub params: LinearSetupParams,
    /// `‖u‖ = 1/√m`.
    pub u: Vec<f64>,
}

impl LinearSetup {
    pub fn new(params: LinearSetupParams, rng: &mut Rng) -> Result<Self> {
        if params.m == 0 {
            return invalid("m must be positive");
        }
        if params.k == 0 || params.n == 0 {
            return invalid("K and N must be positive");
        }
        let u = rng.sphere_point(params.k, 1.0 / (params.m as f64).sqrt());
        Ok(Self { params, u })
    }

    /// Standard deviation of each noise coordinate: `√(32/N)`.
    pub fn noise_sigma(&self) -> f64 {
        (32.0 / self.params.n as f64).sqrt()
    }

    pub fn meta(&self) -> ScenarioMeta {
        ScenarioMeta::Linear { u: self.u.clone(), k: self.params.k, n: self.params.n }
    }

    pub fn sample(&self, count: usize, rng: &mut Rng) -> Result<LabeledDataset> {
        let sigma = self.noise_sigma();
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.sign();
            let mut x: Vec<f64> = self.u.iter().map(|&ui| 2.0 * y as f64 * ui).collect();
            x.extend(rng.normal_vec(self.params.n, sigma));
            inputs.push(x);
            labels.push(y);
        }
        LabeledDataset::with_meta(inputs, labels, LabelSpace::Binary, Some(self.meta()))
    }
}

pub fn gen_linear(params: LinearSetupParams, rng: &mut Rng) -> Result<LabeledDataset> {
    let setup = LinearSetup::new(params, rng)?;
    setup.sample(params.m, rng)
}

/// `S′ = {((x₁, −x₂), y)}`.
pub fn linear_bad_dataset(s: &LabeledDataset) -> Result<LabeledDataset> {
    let k = match s.meta() {
        Some(ScenarioMeta::Linear { k, .. }) => *k,
        _ => return invalid("linear bad dataset needs a linear-setup dataset"),
    };
    let inputs = s
        .inputs()
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| if j < k { v } else { -v })
                .collect()
        })
        .collect();
    LabeledDataset::with_meta(inputs, s.labels().to_vec(), s.space(), s.meta.clone())
}

/// The exponential-activation distribution with its direction `u` fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpSetup {
    pub n: usize,
    /// `‖u‖ = √N / 2`.
    pub u: Vec<f64>,
}

impl ExpSetup {
    pub fn new(n: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 {
            return invalid("N must be positive");
        }
        let u = rng.sphere_point(n, (n as f64).sqrt() / 2.0);
        Ok(Self { n, u })
    }

    pub fn meta(&self) -> ScenarioMeta {
        ScenarioMeta::Exp { u: self.u.clone(), n: self.n }
    }

    pub fn sample(&self, count: usize, rng: &mut Rng) -> Result<LabeledDataset> {
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.sign();
            let mut x: Vec<f64> = self.u.iter().map(|&ui| y as f64 * ui).collect();
            x.extend(rng.normal_vec(self.n, 1.0));
            inputs.push(x);
            labels.push(y);
        }
        LabeledDataset::with_meta(inputs, labels, LabelSpace::Binary, Some(self.meta()))
    }
}

pub fn gen_exp(m: usize, n: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    if m == 0 {
        return invalid("m must be positive");
    }
    let setup = ExpSetup::new(n, rng)?;
    setup.sample(m, rng)
}

/// `S′ = {((−x₁, x₂), −y)}`: everything negated except the noise.
pub fn exp_bad_dataset(s: &LabeledDataset) -> Result<LabeledDataset> {
    let n = match s.meta() {
        Some(ScenarioMeta::Exp { n, .. }) => *n,
        _ => return invalid("exponential bad dataset needs an exponential-setup dataset"),
    };
    let inputs = s
        .inputs()
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| if j < n { -v } else { v })
                .collect()
        })
        .collect();
    let labels = s.labels().iter().map(|&y| -y).collect();
    LabeledDataset::with_meta(inputs, labels, s.space(), s.meta.clone())
}

pub fn exp_conditions(m: usize, n: usize, eps: f64, delta: f64) -> Result<bool> {
    check_eps_delta(eps, delta)?;
    if m == 0 {
        return invalid("m must be positive");
    }
    let (mf, nf) = (m as f64, n as f64);
    let factor = (1.0 / c2()).max((16.0 * c3() * c4()).powi(2));
    Ok(nf >= factor * 2.0 * (6.0 * mf / eps).ln()
        && nf >= factor * 2.0 * (6.0 * mf / delta).ln()
        && nf >= 6.0 * (2.0 * mf).ln()
        && mf > 8.0 * (6.0 / delta).ln())
}

/// Uniform points on two origin-centered spheres. Even indices are class 0
/// on the inner sphere, odd indices class 1 on the outer one.
pub fn gen_hypersphere(m: usize, dim: usize, r_in: f64, r_out: f64, rng: &mut Rng) -> Result<LabeledDataset> {
    if m == 0 || dim == 0 {
        return invalid("m and dim must be positive");
    }
    if !(r_in > 0.0 && r_out > 0.0) || r_in == r_out {
        return invalid("radii must be positive and distinct");
    }
    let mut inputs = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let class = (i % 2) as Label;
        let r = if class == 0 { r_in } else { r_out };
        inputs.push(rng.sphere_point(dim, r));
        labels.push(class);
    }
    LabeledDataset::with_meta(
        inputs,
        labels,
        LabelSpace::Multiclass(2),
        Some(ScenarioMeta::Hypersphere { r_in, r_out }),
    )
}

/// Projects every point onto the other sphere and flips its label.
pub fn hypersphere_bad_dataset(s: &LabeledDataset) -> Result<LabeledDataset> {
    let (r_in, r_out) = match s.meta() {
        Some(ScenarioMeta::Hypersphere { r_in, r_out }) => (*r_in, *r_out),
        _ => return invalid("hypersphere bad dataset needs a hypersphere dataset"),
    };
    let inputs = s
        .inputs()
        .iter()
        .zip(s.labels())
        .map(|(x, &y)| {
            let target = if y == 0 { r_out } else { r_in };
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter().map(|v| v * target / norm).collect()
        })
        .collect();
    let labels = s.labels().iter().map(|&y| 1 - y).collect();
    LabeledDataset::with_meta(inputs, labels, s.space(), s.meta.clone())
}

/// Appends a constant coordinate to every input. Biasless ReLU networks are
/// positively homogeneous, so without it they cannot tell concentric
/// spheres apart; the constant plays the role of a first-layer bias.
pub fn with_constant_feature<T: Real>(s: &LabeledDataset<T>, value: T) -> Result<LabeledDataset<T>> {
    let inputs = s
        .inputs
        .iter()
        .map(|x| {
            let mut v = x.clone();
            v.push(value);
            v
        })
        .collect();
    LabeledDataset::with_meta(inputs, s.labels.clone(), s.space, s.meta.clone())
}

/// Replaces the labels of a uniformly chosen `⌊fraction·m⌋` subset with
/// uniform draws from the label space (which may equal the original).
pub fn corrupt_labels<T: Real>(s: &LabeledDataset<T>, fraction: f64, rng: &mut Rng) -> Result<LabeledDataset<T>> {
    if !(0.0..=1.0).contains(&fraction) {
        return invalid(format!("corruption fraction must lie in [0, 1], got {fraction}"));
    }
    let count = (fraction * s.len() as f64).floor() as usize;
    let mut labels = s.labels().to_vec();
    let perm = rng.permutation(s.len());
    for &i in &perm[..count] {
        labels[i] = s.space().uniform(rng);
    }
    LabeledDataset::with_meta(s.inputs().to_vec(), labels, s.space(), s.meta.clone())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!("truncated before {what}"),
        })
}

/// Parses IDX image and label files. Pixels are scaled by `1/255`; the
/// label space is `0..=max_label`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad image magic {magic:#010x}") });
    }
    let count = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() < count * pixels {
        return Err(Error::Format {
            offset: (16 + body.len()) as u64,
            message: format!("truncated: {count} images of {pixels} pixels need {} bytes", count * pixels),
        });
    }
    if body.len() > count * pixels {
        return Err(Error::Format {
            offset: (16 + count * pixels) as u64,
            message: "trailing bytes after images".into(),
        });
    }

    let magic = be_u32(labels, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad label magic {magic:#010x}") });
    }
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("{label_count} labels for {count} images"),
        });
    }
    let label_body = &labels[8..];
    if label_body.len() != count {
        return Err(Error::Format {
            offset: (8 + label_body.len().min(count)) as u64,
            message: format!("label section holds {} bytes, expected {count}", label_body.len()),
        });
    }
    let inputs = body
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    let ys: Vec<Label> = label_body.iter().map(|&b| b as Label).collect();
    let k = ys.iter().copied().max().unwrap_or(1).max(1) as usize + 1;
    LabeledDataset::new(inputs, ys, LabelSpace::Multiclass(k))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let read = |p: &Path| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        std::fs::File::open(p)?.read_to_end(&mut buf)?;
        Ok(buf)
    };
    parse_idx(&read(images_path)?, &read(labels_path)?)
}
