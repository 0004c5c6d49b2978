//! Per-cell aggregates of a results file.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::results::ResultRow;

/// Mean, median and quartiles (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Stats {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: q(0.5),
            q25: q(0.25),
            q75: q(0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub experiment_id: String,
    pub method: String,
    pub variant: Variant,
    pub b: f64,
    pub pi0: f64,
    pub mu: Option<f64>,
    pub rows: usize,
    /// Rows whose `M̂` is undefined (no minority rows in the test fold).
    pub m_hat_undefined: usize,
    pub m_hat: Option<Stats>,
    pub sensitivity: Option<Stats>,
    pub specificity: Option<Stats>,
    pub accuracy: Option<Stats>,
    pub positive_rate: Option<Stats>,
    pub budget: f64,
    /// Rows whose test positive rate exceeds
    /// `budget + 3 sqrt(budget (1 - budget) / n_test)`.
    pub rate_exceedances: usize,
    /// More than 5% of the rows exceed the tolerance.
    pub rate_flag: bool,
    pub max_calib_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
}

/// Statistical allowance on a test-fold rate at `budget`.
pub fn rate_tolerance(budget: f64, n_test: usize) -> f64 {
    let b = budget.min(1.0);
    3.0 * (b * (1.0 - b) / n_test as f64).sqrt()
}

type CellKey = (String, String, Variant, u64, u64, Option<u64>);

fn key(r: &ResultRow) -> CellKey {
    (
        r.experiment_id.clone(),
        r.method.clone(),
        r.variant,
        r.b.to_bits(),
        r.pi0.to_bits(),
        r.mu.map(f64::to_bits),
    )
}

/// Groups rows by cell in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut index: HashMap<CellKey, usize> = HashMap::new();
    let mut groups: Vec<Vec<&ResultRow>> = Vec::new();
    for r in rows {
        let g = *index.entry(key(r)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }
    let cells = groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let collect = |f: fn(&ResultRow) -> Option<f64>| g.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let budget = first.budget();
            let exceed = g
                .iter()
                .filter(|r| r.positive_rate > budget + rate_tolerance(budget, r.n_test))
                .count();
            CellSummary {
                experiment_id: first.experiment_id.clone(),
                method: first.method.clone(),
                variant: first.variant,
                b: first.b,
                pi0: first.pi0,
                mu: first.mu,
                rows: g.len(),
                m_hat_undefined: g.iter().filter(|r| r.m_hat.is_none()).count(),
                m_hat: Stats::of(&collect(|r| r.m_hat)),
                sensitivity: Stats::of(&collect(|r| r.sensitivity)),
                specificity: Stats::of(&collect(|r| r.specificity)),
                accuracy: Stats::of(&collect(|r| Some(r.accuracy))),
                positive_rate: Stats::of(&collect(|r| Some(r.positive_rate))),
                budget,
                rate_exceedances: exceed,
                rate_flag: exceed * 20 > g.len(),
                max_calib_positive_rate: collect(|r| r.calib_positive_rate).into_iter().reduce(f64::max),
            }
        })
        .collect();
    Summary { cells }
}
