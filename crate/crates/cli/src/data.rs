//! Example pools for the training experiments and their splits.

use std::path::Path;

use genlab::datagen::{corrupt_labels, load_idx, LabelSpace, LabeledDataset};
use genlab::network::{predict_from_logits, Mlp};
use genlab::rng::derive_seed;
use genlab::Rng;

use crate::config::DataSource;
use crate::CliError;

/// All examples the source provides; teacher pools are drawn from `seed`.
pub fn load_pool(source: &DataSource, base: &Path, seed: u64) -> Result<LabeledDataset, CliError> {
    match source {
        DataSource::Idx { images, labels } => Ok(load_idx(&base.join(images), &base.join(labels))?),
        DataSource::Teacher { dim, classes, hidden, size } => {
            let mut rng = Rng::new(derive_seed(seed, 0x7EAC));
            let mut widths = vec![*dim];
            widths.extend(hidden);
            widths.push(*classes);
            let teacher = Mlp::<f64>::xavier(&widths, 1.0, &mut rng)?;
            let mut inputs = Vec::with_capacity(*size);
            let mut labels = Vec::with_capacity(*size);
            for _ in 0..*size {
                let x = rng.normal_vec(*dim, 1.0);
                labels.push(predict_from_logits(&teacher.forward(&x)?));
                inputs.push(x);
            }
            Ok(LabeledDataset::new(inputs, labels, LabelSpace::Multiclass(*classes))?)
        }
    }
}

/// Nested split: under one seed, training sets of growing `m` are prefixes
/// of the same shuffled order, and the test set is the same tail.
pub struct Split {
    order: Vec<usize>,
    test_size: usize,
}

impl Split {
    pub fn new(pool_size: usize, test_size: usize, seed: u64) -> Self {
        Self { order: Rng::new(derive_seed(seed, 0x5911)).permutation(pool_size), test_size }
    }

    pub fn max_train(&self) -> usize {
        self.order.len().saturating_sub(self.test_size)
    }

    pub fn train(&self, pool: &LabeledDataset, m: usize) -> Result<LabeledDataset, CliError> {
        if m > self.max_train() {
            return Err(CliError::Config(format!(
                "training size {m} exceeds the {} examples left after the test split",
                self.max_train()
            )));
        }
        Ok(pool.subset(&self.order[..m])?)
    }

    pub fn test(&self, pool: &LabeledDataset) -> Result<LabeledDataset, CliError> {
        if self.test_size >= self.order.len() {
            return Err(CliError::Config(format!("test size {} leaves no training data", self.test_size)));
        }
        Ok(pool.subset(&self.order[self.order.len() - self.test_size..])?)
    }
}

/// Training labels corrupted at rate `noise`; clean when `noise` is 0.
pub fn noisy(train: LabeledDataset, noise: f64, seed: u64) -> Result<LabeledDataset, CliError> {
    if noise == 0.0 {
        return Ok(train);
    }
    Ok(corrupt_labels(&train, noise, &mut Rng::new(derive_seed(seed, 0x401E)))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_pool_is_seeded() {
        let src = DataSource::Teacher { dim: 5, classes: 3, hidden: vec![8], size: 50 };
        let a = load_pool(&src, Path::new("."), 1).unwrap();
        let b = load_pool(&src, Path::new("."), 1).unwrap();
        let c = load_pool(&src, Path::new("."), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 50);
        assert!(a.labels().iter().all(|&y| (0..3).contains(&y)));
    }

    #[test]
    fn splits_are_nested_and_disjoint() {
        let src = DataSource::Teacher { dim: 2, classes: 2, hidden: vec![], size: 30 };
        let pool = load_pool(&src, Path::new("."), 0).unwrap();
        let split = Split::new(30, 10, 4);
        let small = split.train(&pool, 5).unwrap();
        let big = split.train(&pool, 20).unwrap();
        assert_eq!(&big.inputs()[..5], small.inputs());
        let test = split.test(&pool).unwrap();
        assert!(test.inputs().iter().all(|x| !big.inputs().contains(x)));
        assert!(split.train(&pool, 21).is_err());
    }
}
