//! Domain types shared by every method: feature matrices, labeled datasets,
//! the capacity budget, deterministic splitting, and seed derivation.
//!
//! Labels are `0` for the minority (target) class and `1` for the majority
//! class everywhere in the crate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINORITY: u8 = 0;
pub const MAJORITY: u8 = 1;

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major values. `rows` may be zero (an empty fold).
    pub fn new(values: Vec<f64>, rows: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension must be at least 1".into()));
        }
        if values.len() != rows * dim {
            return Err(Error::InvalidDataset(format!(
                "{} values cannot form {rows} rows of {dim} features",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { values, rows, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} features, expected {dim}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(values, rows.len(), dim)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Column `j` copied out.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            rows: indices.len(),
            dim: self.dim,
        }
    }

    pub(crate) fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.values.extend_from_slice(row);
        self.rows += 1;
    }
}

/// Feature matrix with one binary label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Vec<u8>,
}

impl LabeledDataset {
    /// Validated constructor: at least one row, labels in {0, 1}.
    pub fn new(features: FeatureMatrix, labels: Vec<u8>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyInput("dataset"));
        }
        Self::with_possibly_empty(features, labels)
    }

    /// Same as [`LabeledDataset::new`] but accepts zero rows; used for split folds.
    pub fn with_possibly_empty(features: FeatureMatrix, labels: Vec<u8>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidDataset(format!(
                "label {} at row {i} is not 0 or 1",
                labels[i]
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: Vec<u8>) -> Result<Self> {
        Self::new(FeatureMatrix::from_rows(rows)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let mut features = self.features.clone();
        for r in other.features.iter_rows() {
            features.push_row(r);
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self { features, labels })
    }

    pub(crate) fn push(&mut self, row: &[f64], label: u8) {
        self.features.push_row(row);
        self.labels.push(label);
    }

    /// Indices of rows carrying `label`.
    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows of one class as a (possibly empty) dataset.
    pub fn class_subset(&self, label: u8) -> LabeledDataset {
        self.select(&self.indices_of(label))
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let (c0, c1) = class_counts(self);
        if c0 == 0 {
            return Err(Error::MissingClass(MINORITY));
        }
        if c1 == 0 {
            return Err(Error::MissingClass(MAJORITY));
        }
        Ok(())
    }
}

/// `(minority count, majority count)`.
pub fn class_counts(data: &LabeledDataset) -> (usize, usize) {
    let c0 = data.labels.iter().filter(|&&y| y == MINORITY).count();
    (c0, data.len() - c0)
}

/// The capacity budget `b * pi0` on the rate of minority predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitySpec {
    b: f64,
    pi0: f64,
}

impl CapacitySpec {
    pub fn new(b: f64, pi0: f64) -> Result<Self> {
        if !(pi0 > 0.0 && pi0 < 1.0) {
            return Err(Error::InvalidCapacity(format!("pi0 = {pi0} must lie in (0, 1)")));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InvalidCapacity(format!("b = {b} must be positive")));
        }
        // b = 1/pi0 may round a hair above; allow one ulp-scale slack.
        if b * pi0 > 1.0 + 1e-12 {
            return Err(Error::InvalidCapacity(format!(
                "b = {b} exceeds 1/pi0 = {}",
                1.0 / pi0
            )));
        }
        Ok(Self { b, pi0 })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn pi0(&self) -> f64 {
        self.pi0
    }

    pub fn budget(&self) -> f64 {
        self.b * self.pi0
    }

    /// Largest number of rows out of `n` that may be flagged:
    /// `floor(budget * n)`, with a relative slack of 1e-9 so that products
    /// such as `0.1 * 3 * 10` land on 3 rather than 2.
    pub fn max_selected(&self, n: usize) -> usize {
        let raw = self.budget() * n as f64;
        let m = (raw * (1.0 + 1e-9)).floor() as usize;
        m.min(n)
    }
}

/// Sizes of the training (A1), calibration (A2) and test (B) parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl SplitPlan {
    pub fn new(n1: usize, n2: usize, n3: usize) -> Self {
        Self { n1, n2, n3 }
    }

    /// Half train, half calibrate, nothing held out.
    pub fn halves(n: usize) -> Self {
        let n1 = n.div_ceil(2);
        Self::new(n1, n - n1, 0)
    }

    pub fn total(&self) -> usize {
        self.n1 + self.n2 + self.n3
    }
}

/// Root of every random stream. Derived seeds are mixed with SplitMix64 so
/// that neighbouring stream ids give unrelated generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn derive(self, stream: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn derive_path(self, path: &[u64]) -> RngSeed {
        path.iter().fold(self, |s, &p| s.derive(p))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded permutation of `0..n` cut into the three parts of `plan`.
pub fn split_indices(n: usize, plan: SplitPlan, seed: RngSeed) -> Result<[Vec<usize>; 3]> {
    if plan.total() != n {
        return Err(Error::InvalidPlan {
            expected: n,
            got: plan.total(),
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let third = idx.split_off(plan.n1 + plan.n2);
    let second = idx.split_off(plan.n1);
    Ok([idx, second, third])
}

/// Splits `data` into disjoint (A1, A2, B) folds of the planned sizes.
pub fn split(
    data: &LabeledDataset,
    plan: SplitPlan,
    seed: RngSeed,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let [a, b, c] = split_indices(data.len(), plan, seed)?;
    Ok((data.select(&a), data.select(&b), data.select(&c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> LabeledDataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let labels = (0..n).map(|i| (i % 3 != 0) as u8).collect();
        LabeledDataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn split_three_pairs_is_reproducible() {
        let d = toy(6);
        let plan = SplitPlan::new(2, 2, 2);
        let (a, b, c) = split(&d, plan, RngSeed(7)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (2, 2, 2));
        let again = split(&d, plan, RngSeed(7)).unwrap();
        assert_eq!((a, b, c), again);
    }

    #[test]
    fn degenerate_split_keeps_everything_in_first_part() {
        let d = toy(5);
        let (a, b, c) = split(&d, SplitPlan::new(5, 0, 0), RngSeed(1)).unwrap();
        assert_eq!(a.len(), 5);
        assert!(b.is_empty() && c.is_empty());
    }

    #[test]
    fn same_seed_same_partition() {
        let p = SplitPlan::new(5, 3, 2);
        assert_eq!(
            split_indices(10, p, RngSeed(99)).unwrap(),
            split_indices(10, p, RngSeed(99)).unwrap()
        );
        assert_ne!(
            split_indices(10, p, RngSeed(99)).unwrap(),
            split_indices(10, p, RngSeed(100)).unwrap()
        );
    }

    #[test]
    fn plan_must_cover_dataset() {
        let err = split(&toy(4), SplitPlan::new(1, 1, 1), RngSeed(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidPlan { expected: 4, got: 3 }));
    }

    #[test]
    fn counts() {
        let d = LabeledDataset::from_rows(&[[0.0], [1.0], [2.0]], vec![0, 1, 1]).unwrap();
        assert_eq!(class_counts(&d), (1, 2));
        let d = LabeledDataset::from_rows(&[[0.0], [1.0]], vec![1, 1]).unwrap();
        assert_eq!(class_counts(&d), (0, 2));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(FeatureMatrix::new(vec![1.0, f64::NAN], 1, 2).is_err());
        assert!(LabeledDataset::from_rows(&[[0.0]], vec![2]).is_err());
        assert!(LabeledDataset::from_rows::<[f64; 1]>(&[], vec![]).is_err());
        assert!(CapacitySpec::new(0.0, 0.1).is_err());
        assert!(CapacitySpec::new(11.0, 0.1).is_err());
        assert!(CapacitySpec::new(10.0, 0.1).is_ok());
        assert!(CapacitySpec::new(1.0, 1.0).is_err());
    }

    #[test]
    fn max_selected_absorbs_rounding() {
        let cap = CapacitySpec::new(3.0, 0.1).unwrap();
        assert_eq!(cap.max_selected(10), 3);
        let cap = CapacitySpec::new(2.0, 0.1).unwrap();
        assert_eq!(cap.max_selected(10), 2);
        assert_eq!(cap.max_selected(9), 1);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0, seed: u64) {
            let n1 = ((n as f64) * a * 0.5) as usize;
            let n2 = ((n - n1) as f64 * b) as usize;
            let plan = SplitPlan::new(n1, n2, n - n1 - n2);
            let parts = split_indices(n, plan, RngSeed(seed)).unwrap();
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(parts[0].len(), n1);
            prop_assert_eq!(parts[1].len(), n2);
        }
    }
}
