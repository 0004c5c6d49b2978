//! Random forest of CART trees with soft votes.
//!
//! Each tree is grown on a bootstrap resample by greedy Gini reduction over
//! `mtry` randomly chosen features per node. Leaves keep the fraction of
//! class-0 rows that reached them; the forest score is the mean leaf fraction.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{check_dim, CalibratedClassifier, MinorityScorer};
use crate::data::{CapacitySpec, FeatureMatrix, LabeledDataset, RngSeed, MINORITY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            mtry: None,
            min_leaf: 5,
            max_depth: 20,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One CART tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    nodes: Vec<Node>,
}

impl TreeModel {
    /// Class-0 fraction of the leaf that `x` falls into.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(frac) => return frac,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Grower<'a, R> {
    x: &'a FeatureMatrix,
    minority: Vec<bool>,
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    rng: R,
    nodes: Vec<Node>,
}

struct BestSplit {
    /// Sum over children of `(c0^2 + c1^2) / n`; larger is purer.
    purity: f64,
    feature: usize,
    threshold: f64,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let c0 = rows.iter().filter(|&&i| self.minority[i]).count();
        self.nodes.push(Node::Leaf(c0 as f64 / n as f64));
        if depth >= self.max_depth || c0 == 0 || c0 == n || n < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(rows, c0) else {
            return id;
        };
        let mid = partition(rows, |&i| self.x.row(i)[best.feature] <= best.threshold);
        let (l, r) = rows.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], c0: usize) -> Option<BestSplit> {
        let d = self.x.dim();
        let n = rows.len();
        let parent = ((c0 * c0 + (n - c0) * (n - c0)) as f64) / n as f64;
        let mut features: Vec<usize> = sample(&mut self.rng, d, self.mtry.min(d)).into_vec();
        features.sort_unstable();
        let mut best: Option<BestSplit> = None;
        let mut vals: Vec<(f64, bool)> = Vec::with_capacity(n);
        for f in features {
            vals.clear();
            vals.extend(rows.iter().map(|&i| (self.x.row(i)[f], self.minority[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut l0 = 0usize;
            for s in 1..n {
                l0 += vals[s - 1].1 as usize;
                if vals[s].0 == vals[s - 1].0 || s < self.min_leaf || n - s < self.min_leaf {
                    continue;
                }
                let (l1, r0) = (s - l0, c0 - l0);
                let r1 = n - s - r0;
                let purity = (l0 * l0 + l1 * l1) as f64 / s as f64 + (r0 * r0 + r1 * r1) as f64 / (n - s) as f64;
                // strictly better only; features ascend, thresholds ascend
                if purity > parent && best.as_ref().is_none_or(|b| purity > b.purity) {
                    best = Some(BestSplit {
                        purity,
                        feature: f,
                        threshold: 0.5 * (vals[s - 1].0 + vals[s].0),
                    });
                }
            }
        }
        best
    }
}

fn partition<T, F: Fn(&T) -> bool>(v: &mut [T], pred: F) -> usize {
    let mut k = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, k);
            k += 1;
        }
    }
    k
}

fn validate(params: &ForestParams, d: usize) -> Result<usize> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    if params.min_leaf == 0 {
        return Err(Error::InvalidParameter("min_leaf must be positive".into()));
    }
    let mtry = params.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
    if mtry == 0 || mtry > d {
        return Err(Error::InvalidParameter(format!("mtry = {mtry} must lie in 1..={d}")));
    }
    Ok(mtry)
}

/// Grows one tree on the rows listed in `rows` (repeats allowed).
pub fn fit_tree(train: &LabeledDataset, rows: &[usize], params: &ForestParams, seed: RngSeed) -> Result<TreeModel> {
    let mtry = validate(params, train.dim())?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("tree sample"));
    }
    let mut g = Grower {
        x: train.features(),
        minority: train.labels().iter().map(|&y| y == MINORITY).collect(),
        mtry,
        min_leaf: params.min_leaf,
        max_depth: params.max_depth,
        rng: seed.rng(),
        nodes: Vec::new(),
    };
    let mut rows = rows.to_vec();
    g.grow(&mut rows, 0);
    Ok(TreeModel { nodes: g.nodes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<TreeModel>,
    dim: usize,
}

impl ForestModel {
    pub fn from_trees(trees: Vec<TreeModel>, dim: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        Ok(Self { trees, dim })
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }
}

impl MinorityScorer for ForestModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Mean soft vote over trees.
pub fn forest_score(model: &ForestModel, x: &[f64]) -> Result<f64> {
    check_dim(model.dim, x.len())?;
    Ok(model.score(x))
}

/// Tree `t` uses the stream `seed.derive(t)`, so results do not depend on
/// how trees are scheduled across threads.
pub fn fit_forest(train: &LabeledDataset, params: &ForestParams, seed: RngSeed) -> Result<ForestModel> {
    train.require_both_classes()?;
    validate(params, train.dim())?;
    let n = train.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let s = seed.derive(t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                let mut rng = s.derive(u64::MAX).rng();
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(train, &rows, params, s)
        })
        .collect::<Result<Vec<_>>>()?;
    ForestModel::from_trees(trees, train.dim())
}

/// Forest on `train`, threshold calibrated on `calib`.
pub fn fit_capacity_forest(
    train: &LabeledDataset,
    calib: &FeatureMatrix,
    cap: CapacitySpec,
    params: &ForestParams,
    seed: RngSeed,
) -> Result<CalibratedClassifier<ForestModel>> {
    check_dim(train.dim(), calib.dim())?;
    CalibratedClassifier::fit(fit_forest(train, params, seed)?, calib, cap)
}

/// Unadapted forest: minority when the mean soft vote exceeds 1/2.
pub fn fit_classical_forest(
    train: &LabeledDataset,
    params: &ForestParams,
    seed: RngSeed,
) -> Result<CalibratedClassifier<ForestModel>> {
    Ok(CalibratedClassifier::new(fit_forest(train, params, seed)?, 0.5))
}
