//! Soft-margin support vector machine used as a minority scorer.
//!
//! The dual is solved by sequential minimal optimization with second-order
//! working-set selection. The minority class is coded `y = -1` internally, so
//! the exported score is `-f(x)`. Features are standardized with the
//! training-fold mean and standard deviation.

use serde::{Deserialize, Serialize};

use crate::calib::{check_dim, CalibratedClassifier, MinorityScorer};
use crate::data::{CapacitySpec, FeatureMatrix, LabeledDataset, MINORITY};
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Above this many rows kernel rows are recomputed instead of cached.
const FULL_GRAM_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SvmKernel {
    Linear,
    /// `exp(-gamma |x - z|^2)`; `None` picks `1 / (d * var)` of the
    /// standardized training features.
    Rbf { gamma: Option<f64> },
}

impl Default for SvmKernel {
    fn default() -> Self {
        SvmKernel::Rbf { gamma: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub kernel: SvmKernel,
    pub c: f64,
    /// Stop when the maximal KKT violation pair gap falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: SvmKernel::default(),
            c: 1.0,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ResolvedKernel {
    Linear,
    Rbf(f64),
}

impl ResolvedKernel {
    #[inline]
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            ResolvedKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            ResolvedKernel::Rbf(g) => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-g * d2).exp()
            }
        }
    }
}

/// Fitted SVM: `f(x) = sum_i coef_i k(s_i, x) + offset` on standardized input.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    kernel: ResolvedKernel,
    c: f64,
    mean: Vec<f64>,
    inv_sd: Vec<f64>,
    support: FeatureMatrix,
    /// `alpha_i * y_i` for each support vector.
    coef: Vec<f64>,
    offset: f64,
    /// `y` code of the minority class (`-1` unless fitted with swapped codes).
    minority_code: f64,
    iterations: usize,
}

impl SvmModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_sd)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    /// Raw decision value `f(x)`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.standardize(x);
        self.coef
            .iter()
            .zip(self.support.iter_rows())
            .map(|(c, s)| c * self.kernel.eval(s, &z))
            .sum::<f64>()
            + self.offset
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    /// Dual coefficients `alpha_i >= 0` of the support vectors.
    pub fn alphas(&self) -> Vec<f64> {
        self.coef.iter().map(|c| c.abs()).collect()
    }

    /// `sum_i alpha_i y_i`, zero up to rounding.
    pub fn coef_sum(&self) -> f64 {
        self.coef.iter().sum()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Gamma actually used, `None` for the linear kernel.
    pub fn rbf_gamma(&self) -> Option<f64> {
        match self.kernel {
            ResolvedKernel::Rbf(g) => Some(g),
            ResolvedKernel::Linear => None,
        }
    }
}

impl MinorityScorer for SvmModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.minority_code * self.decision(x)
    }
}

/// Optional diagnostics collected while solving.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    /// Dual objective `sum alpha - (1/2) alpha' Q alpha` after each step.
    pub objective: Vec<f64>,
}

struct Gram<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    kernel: ResolvedKernel,
    full: Option<Vec<f64>>,
    diag: Vec<f64>,
}

impl<'a> Gram<'a> {
    fn new(x: &'a FeatureMatrix, y: &'a [f64], kernel: ResolvedKernel) -> Self {
        let n = x.rows();
        let diag = (0..n).map(|i| kernel.eval(x.row(i), x.row(i))).collect();
        let full = (n <= FULL_GRAM_LIMIT).then(|| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = y[i] * y[j] * kernel.eval(x.row(i), x.row(j));
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            m
        });
        Self { x, y, kernel, full, diag }
    }

    /// Row `i` of `Q = (y_i y_j K_ij)`.
    fn row(&self, i: usize, buf: &mut Vec<f64>) {
        let n = self.x.rows();
        buf.clear();
        match &self.full {
            Some(m) => buf.extend_from_slice(&m[i * n..(i + 1) * n]),
            None => {
                let xi = self.x.row(i);
                buf.extend((0..n).map(|j| self.y[i] * self.y[j] * self.kernel.eval(xi, self.x.row(j))));
            }
        }
    }
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
}

fn solve(gram: &Gram, c: f64, tol: f64, max_iter: usize, mut trace: Option<&mut SolverTrace>) -> Result<Solution> {
    let n = gram.y.len();
    let y = gram.y;
    let qd = &gram.diag;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut qi = Vec::with_capacity(n);
    let mut qj = Vec::with_capacity(n);
    let mut iter = 0;
    loop {
        // i: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        gram.row(i, &mut qi);
        // j: second-order choice in I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut obj_min = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = -y[t] * grad[t];
            gmax2 = gmax2.max(-v);
            let diff = gmax - v;
            if diff > 0.0 {
                let quad = qd[i] + qd[t] - 2.0 * y[i] * y[t] * qi[t];
                let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        let gap = gmax + gmax2;
        let Some(j) = j_sel.filter(|_| gap >= tol) else { break };
        if iter >= max_iter {
            return Err(Error::NonConvergence {
                what: "SMO iteration cap",
                residual: gap,
            });
        }
        iter += 1;
        gram.row(j, &mut qj);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
        if let Some(tr) = trace.as_deref_mut() {
            // alpha' Q alpha = alpha' (grad + 1)
            let quad: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g + 1.0)).sum();
            tr.objective.push(alpha.iter().sum::<f64>() - 0.5 * quad);
        }
    }

    let (mut ub, mut lb, mut sum_free, mut nr_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nr_free += 1;
            sum_free += yg;
        }
    }
    let rho = if nr_free > 0 { sum_free / nr_free as f64 } else { 0.5 * (ub + lb) };
    Ok(Solution { alpha, rho, iterations: iter })
}

fn fit_coded(
    train: &LabeledDataset,
    params: &SvmParams,
    minority_code: f64,
    trace: Option<&mut SolverTrace>,
) -> Result<SvmModel> {
    train.require_both_classes()?;
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c = {} must be positive", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol = {} must be positive", params.tol)));
    }
    let (n, d) = (train.len(), train.dim());
    let x = train.features();
    let mut mean = vec![0.0; d];
    let mut inv_sd = vec![1.0; d];
    for j in 0..d {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        if var > 0.0 {
            inv_sd[j] = 1.0 / var.sqrt();
        }
    }
    let z: Vec<f64> = x
        .iter_rows()
        .flat_map(|r| r.iter().zip(&mean).zip(&inv_sd).map(|((v, m), s)| (v - m) * s).collect::<Vec<_>>())
        .collect();
    let z = FeatureMatrix::new(z, n, d)?;
    let kernel = match params.kernel {
        SvmKernel::Linear => ResolvedKernel::Linear,
        SvmKernel::Rbf { gamma: Some(g) } if g > 0.0 && g.is_finite() => ResolvedKernel::Rbf(g),
        SvmKernel::Rbf { gamma: Some(g) } => {
            return Err(Error::InvalidParameter(format!("rbf gamma = {g} must be positive")))
        }
        SvmKernel::Rbf { gamma: None } => {
            let all = z.as_slice();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64;
            ResolvedKernel::Rbf(if var > 0.0 { 1.0 / (d as f64 * var) } else { 1.0 })
        }
    };
    let y: Vec<f64> = train
        .labels()
        .iter()
        .map(|&l| if l == MINORITY { minority_code } else { -minority_code })
        .collect();
    let gram = Gram::new(&z, &y, kernel);
    let sol = solve(&gram, params.c, params.tol, params.max_iter, trace)?;

    let sv: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(SvmModel {
        kernel,
        c: params.c,
        mean,
        inv_sd,
        support: z.select(&sv),
        coef: sv.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
        offset: -sol.rho,
        minority_code,
        iterations: sol.iterations,
    })
}

/// Fits the soft-margin SVM. The solver is deterministic, so no seed is needed.
pub fn fit_svm(train: &LabeledDataset, params: &SvmParams) -> Result<SvmModel> {
    fit_coded(train, params, -1.0, None)
}

/// As [`fit_svm`], also recording the dual objective after every step.
pub fn fit_svm_traced(train: &LabeledDataset, params: &SvmParams) -> Result<(SvmModel, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let m = fit_coded(train, params, -1.0, Some(&mut trace))?;
    Ok((m, trace))
}

/// SVM on `train` with the score threshold calibrated on `calib`.
pub fn fit_capacity_svm(
    train: &LabeledDataset,
    calib: &FeatureMatrix,
    cap: CapacitySpec,
    params: &SvmParams,
) -> Result<CalibratedClassifier<SvmModel>> {
    check_dim(train.dim(), calib.dim())?;
    CalibratedClassifier::fit(fit_svm(train, params)?, calib, cap)
}

/// Unadapted SVM: minority exactly where `f(x) < 0`.
pub fn fit_classical_svm(train: &LabeledDataset, params: &SvmParams) -> Result<CalibratedClassifier<SvmModel>> {
    Ok(CalibratedClassifier::new(fit_svm(train, params)?, 0.0))
}
