//! Disagreement, ensemble confidence and calibration statistics, and the
//! disagreement-equals-test-error checks built on them.
//!
//! Statistics are generic over [`Probability`] so the finite-ensemble
//! identities can be evaluated exactly in `Rational64`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::network::Mlp;
use crate::scalar::{Probability, Real};
use crate::training::{RunPair, StochasticityMode};
use crate::Label;

/// Predicted class index (in `0..K`) of every model on every example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionTable {
    num_classes: usize,
    /// `preds[model][example]`.
    preds: Vec<Vec<usize>>,
    labels: Option<Vec<usize>>,
}

fn check_class(v: Label, k: usize) -> Result<usize> {
    if v < 0 || v as usize >= k {
        return invalid(format!("class {v} outside 0..{k}"));
    }
    Ok(v as usize)
}

impl PredictionTable {
    pub fn new(preds: Vec<Vec<Label>>, labels: Option<Vec<Label>>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return invalid("need at least one class");
        }
        if preds.is_empty() {
            return invalid("prediction table needs at least one model");
        }
        let n = preds[0].len();
        if n == 0 {
            return invalid("prediction table needs at least one example");
        }
        if preds.iter().any(|p| p.len() != n) {
            return invalid("prediction table is not rectangular");
        }
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return invalid("label count does not match example count");
        }
        let convert = |row: &Vec<Label>| row.iter().map(|&v| check_class(v, num_classes)).collect::<Result<Vec<_>>>();
        Ok(Self {
            num_classes,
            preds: preds.iter().map(convert).collect::<Result<_>>()?,
            labels: labels.as_ref().map(convert).transpose()?,
        })
    }

    pub fn models(&self) -> usize {
        self.preds.len()
    }

    pub fn examples(&self) -> usize {
        self.preds[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn predictions(&self, model: usize) -> &[usize] {
        &self.preds[model]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    fn require_labels(&self) -> Result<&[usize]> {
        match self.labels.as_deref() {
            Some(l) => Ok(l),
            None => invalid("operation needs true labels"),
        }
    }

    fn check_model(&self, i: usize) -> Result<()> {
        if i >= self.models() {
            return invalid(format!("model {i} out of range (M = {})", self.models()));
        }
        Ok(())
    }

    /// Rows are examples, columns `m0..m{M-1}` then `label` if present.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (0..self.models()).map(|i| format!("m{i}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for e in 0..self.examples() {
            let mut row: Vec<String> = self.preds.iter().map(|p| p[e].to_string()).collect();
            if let Some(l) = &self.labels {
                row.push(l[e].to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses [`to_csv`](Self::to_csv) output. Without `num_classes`, `K`
    /// is one more than the largest class seen. Lines starting with `#` are
    /// skipped.
    pub fn from_csv(text: &str, num_classes: Option<usize>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| Error::InvalidInput("empty prediction CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let has_label = cols.last() == Some(&"label");
        let models = cols.len() - has_label as usize;
        for (i, c) in cols[..models].iter().enumerate() {
            if *c != format!("m{i}") {
                return invalid(format!("unexpected column {c:?} at position {i}"));
            }
        }
        let mut preds = vec![Vec::new(); models];
        let mut labels = Vec::new();
        for (line_no, line) in lines {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<Label>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", line_no + 1)))?;
            if vals.len() != cols.len() {
                return invalid(format!("line {}: expected {} fields, got {}", line_no + 1, cols.len(), vals.len()));
            }
            for (p, &v) in preds.iter_mut().zip(&vals) {
                p.push(v);
            }
            if has_label {
                labels.push(vals[models]);
            }
        }
        let k = match num_classes {
            Some(k) => k,
            None => preds.iter().flatten().chain(&labels).copied().max().unwrap_or(0).max(0) as usize + 1,
        };
        Self::new(preds, has_label.then_some(labels), k)
    }
}

/// Per-example ensemble confidence `h̃(x) ∈ [0, 1]^K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceProfile<P>(pub Vec<Vec<P>>);

impl<P: Probability> ConfidenceProfile<P> {
    pub fn examples(&self) -> usize {
        self.0.len()
    }

    pub fn num_classes(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        let k = self.num_classes();
        if self.0.is_empty() || k == 0 {
            return invalid("empty confidence profile");
        }
        if self.0.iter().any(|r| r.len() != k) {
            return invalid("confidence profile is not rectangular");
        }
        Ok(())
    }
}

/// Fraction of examples on which models `i` and `j` disagree.
pub fn disagreement_rate<P: Probability>(t: &PredictionTable, i: usize, j: usize) -> Result<P> {
    t.check_model(i)?;
    t.check_model(j)?;
    let count = t.preds[i].iter().zip(&t.preds[j]).filter(|(a, b)| a != b).count();
    Ok(P::ratio(count, t.examples()))
}

/// Fraction of examples model `i` gets wrong.
pub fn test_error<P: Probability>(t: &PredictionTable, i: usize) -> Result<P> {
    t.check_model(i)?;
    let labels = t.require_labels()?;
    let count = t.preds[i].iter().zip(labels).filter(|(a, b)| a != b).count();
    Ok(P::ratio(count, t.examples()))
}

/// `h̃_k(x)`: the fraction of models predicting class `k` on `x`.
pub fn confidence_profile<P: Probability>(t: &PredictionTable) -> ConfidenceProfile<P> {
    let (m, k) = (t.models(), t.num_classes());
    ConfidenceProfile(
        (0..t.examples())
            .map(|e| {
                let mut counts = vec![0usize; k];
                for p in &t.preds {
                    counts[p[e]] += 1;
                }
                counts.into_iter().map(|c| P::ratio(c, m)).collect()
            })
            .collect(),
    )
}

fn mean<P: Probability>(values: impl Iterator<Item = P>, n: usize) -> P {
    values.fold(P::zero(), |acc, v| acc + v) / P::ratio(n, 1)
}

/// `E_x[Σ_k h̃_k(1 − h̃_k)]`, the with-replacement pair estimator.
pub fn expected_disagreement<P: Probability>(profile: &ConfidenceProfile<P>) -> Result<P> {
    profile.check()?;
    Ok(mean(
        profile.0.iter().map(|row| row.iter().fold(P::zero(), |acc, h| acc + h.clone() * (P::one() - h.clone()))),
        profile.examples(),
    ))
}

/// Distinct-pair estimator: the with-replacement value times `M/(M − 1)`.
pub fn expected_disagreement_distinct<P: Probability>(profile: &ConfidenceProfile<P>, models: usize) -> Result<P> {
    if models < 2 {
        return invalid("distinct pairs need at least two models");
    }
    Ok(expected_disagreement(profile)? * P::ratio(models, models - 1))
}

fn check_labels<P: Probability>(profile: &ConfidenceProfile<P>, labels: &[usize]) -> Result<()> {
    profile.check()?;
    if labels.len() != profile.examples() {
        return invalid("label count does not match the profile");
    }
    if labels.iter().any(|&y| y >= profile.num_classes()) {
        return invalid("label outside the profile's classes");
    }
    Ok(())
}

/// `E_x[1 − h̃_Y(x)]`.
pub fn expected_test_error<P: Probability>(profile: &ConfidenceProfile<P>, labels: &[usize]) -> Result<P> {
    check_labels(profile, labels)?;
    Ok(mean(
        profile.0.iter().zip(labels).map(|(row, &y)| P::one() - row[y].clone()),
        profile.examples(),
    ))
}

/// How confidences are grouped into bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    /// `bins` equal-width bins over `[0, 1]`, left-closed right-open, the
    /// last one closed.
    Uniform { bins: usize },
    /// One bin per attainable confidence `j/models`, `j = 0..=models`.
    Exact { models: usize },
}

impl Binning {
    fn count(self) -> Result<usize> {
        match self {
            Binning::Uniform { bins: 0 } => invalid("need at least one bin"),
            Binning::Exact { models: 0 } => invalid("exact bins need at least one model"),
            Binning::Uniform { bins } => Ok(bins),
            Binning::Exact { models } => Ok(models + 1),
        }
    }

    fn index<P: Probability>(self, c: &P) -> usize {
        match self {
            Binning::Uniform { bins } => c.bin_of(bins),
            Binning::Exact { models } => c.nearest_multiple(models),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin<P> {
    pub count: usize,
    /// Fraction of members whose class is correct; 0 for an empty bin.
    pub accuracy: P,
    /// Mean member confidence; 0 for an empty bin.
    pub confidence: P,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult<P> {
    pub value: P,
    pub bins: Vec<CalibrationBin<P>>,
}

/// Bins `(confidence, correct)` members and returns `Σ (|B|/n)|acc − conf|`.
fn binned_error<P: Probability>(
    members: impl Iterator<Item = (P, bool)>,
    binning: Binning,
    n: usize,
) -> Result<CalibrationResult<P>> {
    let count = binning.count()?;
    let mut sums = vec![(0usize, 0usize, P::zero()); count];
    for (c, correct) in members {
        let slot = &mut sums[binning.index(&c)];
        slot.0 += 1;
        slot.1 += correct as usize;
        slot.2 = slot.2.clone() + c;
    }
    let mut value = P::zero();
    let bins = sums
        .into_iter()
        .map(|(size, hits, conf_sum)| {
            if size == 0 {
                return CalibrationBin { count: 0, accuracy: P::zero(), confidence: P::zero() };
            }
            let accuracy = P::ratio(hits, size);
            let confidence = conf_sum / P::ratio(size, 1);
            value = value.clone() + P::ratio(size, n) * (accuracy.clone() - confidence.clone()).abs();
            CalibrationBin { count: size, accuracy, confidence }
        })
        .collect();
    Ok(CalibrationResult { value, bins })
}

/// Class-aggregated calibration error. Bins pool every (example, class)
/// pair; weights are `|B|/n` with `n` the number of examples.
pub fn cace<P: Probability>(profile: &ConfidenceProfile<P>, labels: &[usize], binning: Binning) -> Result<CalibrationResult<P>> {
    check_labels(profile, labels)?;
    let members = profile
        .0
        .iter()
        .zip(labels)
        .flat_map(|(row, &y)| row.iter().enumerate().map(move |(k, h)| (h.clone(), k == y)));
    binned_error(members, binning, profile.examples())
}

/// Top-class expected calibration error; ties go to the smallest class.
pub fn ece<P: Probability>(profile: &ConfidenceProfile<P>, labels: &[usize], binning: Binning) -> Result<CalibrationResult<P>> {
    check_labels(profile, labels)?;
    let members = profile.0.iter().zip(labels).map(|(row, &y)| {
        let mut top = 0;
        for (k, h) in row.iter().enumerate() {
            if *h > row[top] {
                top = k;
            }
        }
        (row[top].clone(), top == y)
    });
    binned_error(members, binning, profile.examples())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdeReport {
    pub test_errors: Vec<f64>,
    /// `(i, j, Dis)` for every `i < j`.
    pub disagreements: Vec<(usize, usize, f64)>,
    pub ete: f64,
    pub edr: f64,
    pub edr_distinct: Option<f64>,
    pub gap: f64,
    pub cace: f64,
    pub ece: f64,
    pub binning: Binning,
    pub slack: f64,
    pub deviation_verdict: bool,
}

/// `gap <= CACE + slack`.
pub fn deviation_check(report: &GdeReport) -> bool {
    report.gap <= report.cace + report.slack
}

pub fn gde_report(t: &PredictionTable, binning: Binning, slack: f64) -> Result<GdeReport> {
    let labels = t.require_labels()?;
    let profile = confidence_profile::<f64>(t);
    let m = t.models();
    let test_errors = (0..m).map(|i| test_error(t, i)).collect::<Result<Vec<f64>>>()?;
    let mut disagreements = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            disagreements.push((i, j, disagreement_rate(t, i, j)?));
        }
    }
    let ete = expected_test_error(&profile, labels)?;
    let edr = expected_disagreement(&profile)?;
    let mut report = GdeReport {
        test_errors,
        disagreements,
        ete,
        edr,
        edr_distinct: if m > 1 { Some(expected_disagreement_distinct(&profile, m)?) } else { None },
        gap: (ete - edr).abs(),
        cace: cace(&profile, labels, binning)?.value,
        ece: ece(&profile, labels, binning)?.value,
        binning,
        slack,
        deviation_verdict: false,
    };
    report.deviation_verdict = deviation_check(&report);
    Ok(report)
}

/// Predictions of one run pair on a shared test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPredictions {
    pub mode: StochasticityMode,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub labels: Vec<usize>,
}

impl PairPredictions {
    pub fn from_run_pair<T: Real>(mode: StochasticityMode, pair: &RunPair<T>, test: &LabeledDataset<T>) -> Result<Self> {
        let predict = |net: &Mlp<T>| -> Result<Vec<usize>> {
            Ok(net.predict_batch(test.inputs())?.into_iter().map(|y| test.space().index(y)).collect())
        };
        Ok(Self {
            mode,
            a: predict(&pair.nets[0])?,
            b: predict(&pair.nets[1])?,
            labels: test.labels().iter().map(|&y| test.space().index(y)).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub mode: StochasticityMode,
    pub disagreement: f64,
    /// Mean test error of the two runs.
    pub test_error: f64,
    pub test_error_a: f64,
    pub test_error_b: f64,
}

pub fn gde_scatter(pairs: &[PairPredictions]) -> Result<Vec<ScatterRow>> {
    pairs
        .iter()
        .map(|p| {
            let n = p.labels.len();
            if n == 0 || p.a.len() != n || p.b.len() != n {
                return invalid("pair predictions must be non-empty and aligned with the labels");
            }
            let frac = |c: usize| c as f64 / n as f64;
            let err = |preds: &[usize]| frac(preds.iter().zip(&p.labels).filter(|(a, b)| a != b).count());
            let (ea, eb) = (err(&p.a), err(&p.b));
            Ok(ScatterRow {
                mode: p.mode,
                disagreement: frac(p.a.iter().zip(&p.b).filter(|(a, b)| a != b).count()),
                test_error: (ea + eb) / 2.0,
                test_error_a: ea,
                test_error_b: eb,
            })
        })
        .collect()
}

fn mode_name(mode: StochasticityMode) -> &'static str {
    match mode {
        StochasticityMode::AllDiff => "all_diff",
        StochasticityMode::DiffData => "diff_data",
        StochasticityMode::DiffInit => "diff_init",
        StochasticityMode::DiffOrder => "diff_order",
        StochasticityMode::Identical => "identical",
    }
}

/// Header `disagreement,test_error,mode` and one row per pair.
pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("disagreement,test_error,mode\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.disagreement, r.test_error, mode_name(r.mode));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    type Q = Rational64;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n, d)
    }

    fn hand_table() -> PredictionTable {
        PredictionTable::new(
            vec![vec![0, 1, 1, 0, 2], vec![0, 1, 0, 0, 2], vec![1, 1, 0, 2, 2]],
            Some(vec![0, 1, 0, 0, 1]),
            3,
        )
        .unwrap()
    }

    #[test]
    fn disagreement_cases() {
        let t = hand_table();
        assert_eq!(disagreement_rate::<Q>(&t, 1, 1).unwrap(), q(0, 1));
        assert_eq!(disagreement_rate::<Q>(&t, 0, 1).unwrap(), q(1, 5));
        assert_eq!(disagreement_rate::<Q>(&t, 0, 2).unwrap(), q(3, 5));
        assert_eq!(disagreement_rate::<Q>(&t, 1, 2).unwrap(), q(2, 5));
        let c = PredictionTable::new(vec![vec![0, 1, 0], vec![1, 0, 1]], None, 2).unwrap();
        assert_eq!(disagreement_rate::<f64>(&c, 0, 1).unwrap(), 1.0);
        assert!(disagreement_rate::<f64>(&c, 0, 2).is_err());
    }

    #[test]
    fn test_error_cases() {
        let t = hand_table();
        assert_eq!(test_error::<Q>(&t, 0).unwrap(), q(2, 5));
        assert_eq!(test_error::<Q>(&t, 1).unwrap(), q(1, 5));
        assert_eq!(test_error::<Q>(&t, 2).unwrap(), q(3, 5));
        let perfect = PredictionTable::new(vec![vec![0, 1]], Some(vec![0, 1]), 2).unwrap();
        assert_eq!(test_error::<f64>(&perfect, 0).unwrap(), 0.0);
        let wrong = PredictionTable::new(vec![vec![1, 1]], Some(vec![0, 0]), 2).unwrap();
        assert_eq!(test_error::<f64>(&wrong, 0).unwrap(), 1.0);
        let unlabeled = PredictionTable::new(vec![vec![1, 1]], None, 2).unwrap();
        assert!(test_error::<f64>(&unlabeled, 0).is_err());
    }

    #[test]
    fn profile_cases() {
        let t = hand_table();
        let p = confidence_profile::<Q>(&t);
        assert_eq!(p.0[0], vec![q(2, 3), q(1, 3), q(0, 1)]);
        assert_eq!(p.0[3], vec![q(2, 3), q(0, 1), q(1, 3)]);
        assert_eq!(p.0[4], vec![q(0, 1), q(0, 1), q(1, 1)]);
        let single = PredictionTable::new(vec![vec![1, 0]], None, 2).unwrap();
        assert_eq!(confidence_profile::<f64>(&single).0, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn edr_level_set_fixture() {
        // Half the examples at h̃₀ = 0.1, half at 0.2: mean of 2·0.09 and 2·0.16.
        let p = ConfidenceProfile(vec![vec![q(1, 10), q(9, 10)], vec![q(2, 10), q(8, 10)]]);
        assert_eq!(expected_disagreement(&p).unwrap(), q(1, 4));
    }

    #[test]
    fn edr_matches_pair_average() {
        let t = hand_table();
        let m = t.models();
        let mut total = Q::from_integer(0);
        for i in 0..m {
            for j in 0..m {
                total += disagreement_rate::<Q>(&t, i, j).unwrap();
            }
        }
        let p = confidence_profile::<Q>(&t);
        assert_eq!(expected_disagreement(&p).unwrap(), total / Q::from_integer((m * m) as i64));
        let distinct = total / Q::from_integer((m * (m - 1)) as i64);
        assert_eq!(expected_disagreement_distinct(&p, m).unwrap(), distinct);
    }

    #[test]
    fn ete_matches_mean_test_error() {
        let t = hand_table();
        let p = confidence_profile::<Q>(&t);
        let mean: Q = (0..3).map(|i| test_error::<Q>(&t, i).unwrap()).sum::<Q>() / Q::from_integer(3);
        assert_eq!(expected_test_error(&p, t.labels().unwrap()).unwrap(), mean);
    }

    #[test]
    fn calibrated_level_set() {
        // Binary, h̃₀ = 1/4 everywhere, label 0 on exactly a quarter.
        let p = ConfidenceProfile(vec![vec![q(1, 4), q(3, 4)]; 4]);
        let labels = [0, 1, 1, 1];
        let ete = expected_test_error(&p, &labels).unwrap();
        assert_eq!(ete, q(3, 8));
        assert_eq!(ete, expected_disagreement(&p).unwrap());
        assert_eq!(cace(&p, &labels, Binning::Uniform { bins: 10 }).unwrap().value, q(0, 1));
    }

    #[test]
    fn cace_hand_fixture() {
        // Two classes, four examples, bins of width 1/2.
        let p = ConfidenceProfile(vec![
            vec![q(1, 1), q(0, 1)],
            vec![q(3, 4), q(1, 4)],
            vec![q(1, 4), q(3, 4)],
            vec![q(1, 2), q(1, 2)],
        ]);
        let labels = [0, 1, 1, 0];
        // Low bin [0, 1/2): confidences 0, 1/4, 1/4 with correctness F, T, F.
        // High bin [1/2, 1]: 1, 3/4, 3/4, 1/2, 1/2 with correctness T, F, T, T, F.
        let r = cace(&p, &labels, Binning::Uniform { bins: 2 }).unwrap();
        assert_eq!(r.bins[0].count, 3);
        assert_eq!(r.bins[0].accuracy, q(1, 3));
        assert_eq!(r.bins[0].confidence, q(1, 6));
        assert_eq!(r.bins[1].accuracy, q(3, 5));
        assert_eq!(r.bins[1].confidence, q(7, 10));
        assert_eq!(r.value, q(3, 4) * q(1, 6) + q(5, 4) * q(1, 10));
    }

    #[test]
    fn cace_single_bin_vanishes() {
        let t = hand_table();
        let p = confidence_profile::<Q>(&t);
        let r = cace(&p, t.labels().unwrap(), Binning::Uniform { bins: 1 }).unwrap();
        assert_eq!(r.bins[0].count, 15);
        assert_eq!(r.bins[0].accuracy, q(1, 3));
        assert_eq!(r.bins[0].confidence, q(1, 3));
        assert_eq!(r.value, q(0, 1));
    }

    #[test]
    fn ece_cases() {
        let onehot = ConfidenceProfile(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(ece(&onehot, &[0, 1], Binning::Uniform { bins: 10 }).unwrap().value, 0.0);
        let t = hand_table();
        let p = confidence_profile::<Q>(&t);
        // Top classes: 0 (2/3, ok), 1 (1, ok), 0 (2/3, ok), 0 (2/3, ok), 2 (1, wrong).
        let r = ece(&p, t.labels().unwrap(), Binning::Uniform { bins: 10 }).unwrap();
        assert_eq!(r.value, q(3, 5) * q(1, 3) + q(2, 5) * q(1, 2));
    }

    #[test]
    fn bin_boundaries() {
        assert_eq!(q(3, 10).bin_of(10), 3);
        assert_eq!(q(1, 1).bin_of(10), 9);
        assert_eq!(q(2, 3).nearest_multiple(3), 2);
        assert_eq!((2.0f64 / 3.0).nearest_multiple(3), 2);
    }

    #[test]
    fn report_and_deviation() {
        let t = hand_table();
        let r = gde_report(&t, Binning::Exact { models: 3 }, 0.0).unwrap();
        assert!(r.deviation_verdict);
        assert_eq!(r.disagreements.len(), 3);
        let onehot = PredictionTable::new(vec![vec![0, 1, 1]], Some(vec![0, 1, 0]), 2).unwrap();
        let r = gde_report(&onehot, Binning::Uniform { bins: 10 }, 0.0).unwrap();
        assert_eq!(r.edr, 0.0);
        assert!((r.gap - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.deviation_verdict);
    }

    #[test]
    fn csv_round_trip() {
        let t = hand_table();
        let csv = t.to_csv();
        assert!(csv.starts_with("m0,m1,m2,label\n"));
        assert_eq!(PredictionTable::from_csv(&csv, Some(3)).unwrap(), t);
        assert_eq!(PredictionTable::from_csv(&csv, None).unwrap(), t);
        assert!(PredictionTable::from_csv("m0,x\n1,2\n", None).is_err());
    }

    #[test]
    fn scatter_rows() {
        let same = PairPredictions { mode: StochasticityMode::Identical, a: vec![0, 1, 1], b: vec![0, 1, 1], labels: vec![0, 0, 1] };
        let diff = PairPredictions { mode: StochasticityMode::DiffInit, a: vec![0, 1, 1], b: vec![1, 1, 1], labels: vec![0, 0, 1] };
        let rows = gde_scatter(&[same, diff]).unwrap();
        assert_eq!(rows[0].disagreement, 0.0);
        assert!((rows[0].test_error - 1.0 / 3.0).abs() < 1e-15);
        assert!((rows[1].test_error - 0.5).abs() < 1e-15);
        let csv = scatter_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",diff_init"));
    }
}
