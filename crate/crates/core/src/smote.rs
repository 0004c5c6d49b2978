//! SMOTE oversampling for the unconstrained comparators.
//!
//! Synthetic rows are `x + lambda (z - x)` with `lambda ~ U(0, 1)` and `z`
//! drawn uniformly from the `k` nearest minority neighbours of parent `x`.
//! Parents cycle through the minority rows in order, so the synthetic count is
//! exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, RngSeed, MINORITY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Minority multiplier, at least 1.
    pub factor: f64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            factor: 4.0,
        }
    }
}

/// Piecewise-linear `pi0 -> factor` schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSchedule {
    /// `(pi0, factor)` knots.
    pub knots: Vec<(f64, f64)>,
}

impl FactorSchedule {
    pub fn new(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one knot".into()));
        }
        if knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
            return Err(Error::InvalidParameter("schedule knots must be finite".into()));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate pi0 knot in schedule".into()));
        }
        Ok(Self { knots })
    }
}

/// Interpolated factor at `pi0`, clamped to `[1, 20]`.
pub fn schedule_factor(pi0: f64, schedule: &FactorSchedule) -> Result<f64> {
    let k = &schedule.knots;
    let (lo, hi) = (k[0].0, k[k.len() - 1].0);
    if !(lo..=hi).contains(&pi0) {
        return Err(Error::InvalidParameter(format!(
            "pi0 = {pi0} outside the schedule range [{lo}, {hi}]"
        )));
    }
    let i = k.partition_point(|p| p.0 <= pi0);
    let f = if i == k.len() {
        k[k.len() - 1].1
    } else {
        let (a, b) = (k[i - 1], k[i]);
        a.1 + (pi0 - a.0) / (b.0 - a.0) * (b.1 - a.1)
    };
    Ok(f.clamp(1.0, 20.0))
}

/// Minority count after augmentation: `round(count * factor)`.
pub fn augmented_minority_count(count: usize, factor: f64) -> usize {
    (count as f64 * factor).round() as usize
}

/// Returns `train` followed by the synthetic minority rows.
pub fn smote_augment(train: &LabeledDataset, cfg: &SmoteConfig, seed: RngSeed) -> Result<LabeledDataset> {
    if !(cfg.factor >= 1.0 && cfg.factor.is_finite()) {
        return Err(Error::InvalidParameter(format!("factor = {} must be at least 1", cfg.factor)));
    }
    let minority = train.indices_of(MINORITY);
    let c = minority.len();
    let extra = augmented_minority_count(c, cfg.factor).saturating_sub(c);
    if extra == 0 {
        return Ok(train.clone());
    }
    if c < 2 {
        return Err(Error::InsufficientClassCount {
            class: MINORITY,
            needed: 2,
            available: c,
        });
    }
    if cfg.k_neighbors == 0 || cfg.k_neighbors >= c {
        return Err(Error::InvalidParameter(format!(
            "k_neighbors = {} must lie in 1..{c}",
            cfg.k_neighbors
        )));
    }
    let x = train.features();
    // k nearest minority neighbours of each minority row, ties by index
    let nbrs: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(cfg.k_neighbors);
            d.into_iter().map(|p| p.1).collect()
        })
        .collect();

    let mut rng = seed.rng();
    let mut out = train.clone();
    let mut row = vec![0.0; train.dim()];
    for s in 0..extra {
        let p = s % c;
        let parent = x.row(minority[p]);
        let z = x.row(nbrs[p][rng.random_range(0..cfg.k_neighbors)]);
        let lambda: f64 = rng.random();
        for (r, (a, b)) in row.iter_mut().zip(parent.iter().zip(z)) {
            *r = a + lambda * (b - a);
        }
        out.push(&row, MINORITY);
    }
    Ok(out)
}
