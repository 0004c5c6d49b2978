//! Kernel-density plug-in classifier.
//!
//! Each class density is a product-kernel average over that class's
//! training rows. The minority score is the ratio `f0 / f1`; a capacity
//! threshold on the ratio is calibrated on a separate fold, while the Bayes
//! plug-in uses the fixed cut `pi1 / pi0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calib::{check_dim, CalibratedClassifier, MinorityScorer};
use crate::data::{split, CapacitySpec, FeatureMatrix, LabeledDataset, RngSeed, SplitPlan, MAJORITY, MINORITY};
use crate::error::{Error, Result};
use crate::numeric::INV_SQRT_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// One-dimensional kernel profile, integrating to one.
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width in units of `h` outside which the profile is exactly zero
    /// in double precision.
    fn reach(self) -> f64 {
        match self {
            // exp(-0.5 u^2) underflows to 0 past u ~ 38.6
            Kernel::Gaussian => 38.7,
            Kernel::Epanechnikov => 1.0,
        }
    }
}

/// How the per-class bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Robust normal-reference rule per class, see [`silverman_bandwidth`].
    #[default]
    Silverman,
    /// Same bandwidth for both classes.
    Fixed(f64),
}

/// `1.06 * min(sd, IQR / 1.34) * n^(-1/(d+4))` per coordinate, averaged
/// over coordinates. The IQR guard keeps heavy-tailed classes from getting an
/// absurd bandwidth. Degenerate coordinates fall back to whichever spread is
/// positive, then to 1.
pub fn silverman_bandwidth(points: &FeatureMatrix) -> Result<f64> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::EmptyInput("bandwidth sample"));
    }
    let d = points.dim();
    let factor = 1.06 * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    let mut total = 0.0;
    for j in 0..d {
        let mut col = points.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        col.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        let robust = iqr / 1.34;
        let spread = match (sd > 0.0, robust > 0.0) {
            (true, true) => sd.min(robust),
            (true, false) => sd,
            (false, true) => robust,
            (false, false) => 1.0,
        };
        total += factor * spread;
    }
    Ok(total / d as f64)
}

/// Linear-interpolation quantile of an ascending slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Kernel average over one class, rows sorted by the first coordinate so that
/// evaluation only visits rows whose kernel weight can be nonzero.
#[derive(Debug, Clone, PartialEq)]
struct ClassDensity {
    points: FeatureMatrix,
    first: Vec<f64>,
    h: f64,
}

impl ClassDensity {
    fn new(points: &FeatureMatrix, h: f64) -> Self {
        let mut order: Vec<usize> = (0..points.rows()).collect();
        order.sort_by(|&a, &b| points.row(a)[0].total_cmp(&points.row(b)[0]));
        let points = points.select(&order);
        let first = points.column(0);
        Self { points, first, h }
    }

    fn eval(&self, kernel: Kernel, x: &[f64]) -> f64 {
        let reach = kernel.reach() * self.h;
        let lo = self.first.partition_point(|&v| v < x[0] - reach);
        let hi = self.first.partition_point(|&v| v <= x[0] + reach);
        let d = x.len();
        let inv_h = 1.0 / self.h;
        let mut sum = 0.0;
        match kernel {
            // product of gaussians = one exponential of the summed squares
            Kernel::Gaussian if d == 1 => {
                for &p in &self.first[lo..hi] {
                    let u = (x[0] - p) * inv_h;
                    sum += (-0.5 * u * u).exp();
                }
                sum *= INV_SQRT_2PI;
            }
            Kernel::Gaussian => {
                for row in self.points.as_slice()[lo * d..hi * d].chunks_exact(d) {
                    let mut q = 0.0;
                    for (xi, pi) in x.iter().zip(row) {
                        let u = (xi - pi) * inv_h;
                        q += u * u;
                    }
                    sum += (-0.5 * q).exp();
                }
                sum *= INV_SQRT_2PI.powi(d as i32);
            }
            Kernel::Epanechnikov => {
                for row in self.points.as_slice()[lo * d..hi * d].chunks_exact(d) {
                    let mut prod = 1.0;
                    for (xi, pi) in x.iter().zip(row) {
                        prod *= kernel.eval((xi - pi) * inv_h);
                        if prod == 0.0 {
                            break;
                        }
                    }
                    sum += prod;
                }
            }
        }
        sum / (self.points.rows() as f64 * self.h.powi(d as i32))
    }
}

/// Fitted per-class kernel density estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    kernel: Kernel,
    class0: ClassDensity,
    class1: ClassDensity,
}

impl KdeModel {
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Bandwidths `(h0, h1)`.
    pub fn bandwidths(&self) -> (f64, f64) {
        (self.class0.h, self.class1.h)
    }

    /// Training counts `(n10, n11)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.class0.points.rows(), self.class1.points.rows())
    }

    pub fn density0(&self, x: &[f64]) -> f64 {
        self.class0.eval(self.kernel, x)
    }

    pub fn density1(&self, x: &[f64]) -> f64 {
        self.class1.eval(self.kernel, x)
    }

    /// `f0 / f1` with `0/0 -> 0` and `f0/0 -> +inf`.
    pub fn ratio(&self, x: &[f64]) -> f64 {
        let f0 = self.density0(x);
        if f0 == 0.0 {
            return 0.0;
        }
        let f1 = self.density1(x);
        if f1 == 0.0 {
            f64::INFINITY
        } else {
            f0 / f1
        }
    }
}

impl MinorityScorer for KdeModel {
    fn dim(&self) -> usize {
        self.class0.points.dim()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.ratio(x)
    }
}

/// Fits both class densities with a common bandwidth `h`.
pub fn fit_kde(train: &LabeledDataset, h: f64, kernel: Kernel) -> Result<KdeModel> {
    fit_kde_with(train, Bandwidth::Fixed(h), kernel)
}

pub fn fit_kde_with(train: &LabeledDataset, bandwidth: Bandwidth, kernel: Kernel) -> Result<KdeModel> {
    train.require_both_classes()?;
    let p0 = train.class_subset(MINORITY).features().clone();
    let p1 = train.class_subset(MAJORITY).features().clone();
    let (h0, h1) = match bandwidth {
        Bandwidth::Fixed(h) => (h, h),
        Bandwidth::Silverman => (silverman_bandwidth(&p0)?, silverman_bandwidth(&p1)?),
    };
    for h in [h0, h1] {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive")));
        }
    }
    Ok(KdeModel {
        kernel,
        class0: ClassDensity::new(&p0, h0),
        class1: ClassDensity::new(&p1, h1),
    })
}

/// Ratio score at `x`; rejects non-finite or wrongly sized points.
pub fn ratio_score(model: &KdeModel, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("query point is not finite".into()));
    }
    Ok(model.ratio(x))
}

/// Fits densities on `a1` and calibrates the ratio threshold `gamma_hat*` on `a2`.
pub fn fit_capacity_kde(
    a1: &LabeledDataset,
    a2: &FeatureMatrix,
    cap: CapacitySpec,
    bandwidth: Bandwidth,
    kernel: Kernel,
) -> Result<CalibratedClassifier<KdeModel>> {
    let model = fit_kde_with(a1, bandwidth, kernel)?;
    CalibratedClassifier::fit(model, a2, cap)
}

/// Splits `data` by `plan` and fits the capacity plug-in on (A1, A2). The
/// test part of the plan is ignored.
pub fn fit_plugin_classifier(
    data: &LabeledDataset,
    plan: SplitPlan,
    cap: CapacitySpec,
    bandwidth: Bandwidth,
    kernel: Kernel,
    seed: RngSeed,
) -> Result<CalibratedClassifier<KdeModel>> {
    let (a1, a2, _) = split(data, plan, seed)?;
    if a2.is_empty() {
        return Err(Error::EmptyInput("calibration fold"));
    }
    fit_capacity_kde(&a1, a2.features(), cap, bandwidth, kernel)
}

/// Bayes plug-in: flag `x` when `pi0 f0(x) > (1 - pi0) f1(x)`.
pub fn fit_bayes_plugin(
    train: &LabeledDataset,
    pi0: f64,
    bandwidth: Bandwidth,
    kernel: Kernel,
) -> Result<CalibratedClassifier<KdeModel>> {
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::InvalidParameter(format!("pi0 = {pi0} must lie in (0, 1)")));
    }
    let model = fit_kde_with(train, bandwidth, kernel)?;
    Ok(CalibratedClassifier::new(model, (1.0 - pi0) / pi0))
}

/// One cell of a regular evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub x: Vec<f64>,
    pub f0_hat: f64,
    pub f1_hat: f64,
    pub score: f64,
    pub label: u8,
}

/// Evaluates a calibrated plug-in on a regular grid over `bounds`
/// (`points_per_axis` nodes per axis, endpoints included). Only for `d <= 3`.
pub fn grid_evaluate(
    clf: &CalibratedClassifier<KdeModel>,
    bounds: &[(f64, f64)],
    points_per_axis: usize,
) -> Result<Vec<GridCell>> {
    let d = clf.scorer().dim();
    check_dim(d, bounds.len())?;
    if d > 3 {
        return Err(Error::InvalidParameter(format!("grid export supports d <= 3, got {d}")));
    }
    if points_per_axis < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points per axis".into()));
    }
    let total = points_per_axis.pow(d as u32);
    let step = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (points_per_axis - 1) as f64;
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let x: Vec<f64> = bounds
            .iter()
            .map(|&b| {
                let i = rem % points_per_axis;
                rem /= points_per_axis;
                step(b, i)
            })
            .collect();
        let m = clf.scorer();
        let score = m.ratio(&x);
        out.push(GridCell {
            f0_hat: m.density0(&x),
            f1_hat: m.density1(&x),
            label: if score > clf.tau() { MINORITY } else { MAJORITY },
            score,
            x,
        });
    }
    Ok(out)
}

/// Writes grid cells as CSV with columns `x1[,x2[,x3]],f0_hat,f1_hat,score,label`.
pub fn write_grid_csv<W: Write>(cells: &[GridCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = cells.first().map_or(0, |c| c.x.len());
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.extend(["f0_hat", "f1_hat", "score", "label"].map(String::from));
    w.write_record(&header)?;
    for c in cells {
        let mut rec: Vec<String> = c.x.iter().map(f64::to_string).collect();
        rec.push(c.f0_hat.to_string());
        rec.push(c.f1_hat.to_string());
        rec.push(c.score.to_string());
        rec.push(c.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{adaptive_simpson, std_normal_pdf};

    fn two_class(xs0: &[f64], xs1: &[f64]) -> LabeledDataset {
        let rows: Vec<[f64; 1]> = xs0.iter().chain(xs1).map(|&x| [x]).collect();
        let labels = xs0.iter().map(|_| 0).chain(xs1.iter().map(|_| 1)).collect();
        LabeledDataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn single_point_gaussian_density() {
        let m = fit_kde(&two_class(&[0.0], &[5.0]), 1.0, Kernel::Gaussian).unwrap();
        assert!((m.density0(&[0.0]) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((m.density0(&[1.0]) - 0.241_970_724_519_143_4).abs() < 1e-15);
    }

    #[test]
    fn symmetric_points_symmetric_density() {
        let m = fit_kde(&two_class(&[-1.0, 1.0], &[7.0]), 0.7, Kernel::Gaussian).unwrap();
        for x in [0.1, 0.5, 1.3, 4.0] {
            assert!((m.density0(&[x]) - m.density0(&[-x])).abs() < 1e-15);
        }
    }

    #[test]
    fn ratio_conventions() {
        let m = fit_kde(&two_class(&[0.0], &[10.0]), 1.0, Kernel::Epanechnikov).unwrap();
        assert_eq!(ratio_score(&m, &[50.0]).unwrap(), 0.0);
        assert_eq!(ratio_score(&m, &[0.0]).unwrap(), f64::INFINITY);
        assert!(ratio_score(&m, &[f64::NAN]).is_err());
        assert!(ratio_score(&m, &[0.0, 1.0]).is_err());
        // arithmetic ratio when both are positive
        let g = fit_kde(&two_class(&[0.0], &[1.0]), 1.0, Kernel::Gaussian).unwrap();
        let want = std_normal_pdf(0.3) / std_normal_pdf(0.7);
        assert!((g.ratio(&[0.3]) - want).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let one_class = two_class(&[0.0, 1.0], &[]);
        assert!(matches!(fit_kde(&one_class, 1.0, Kernel::Gaussian), Err(Error::MissingClass(_))));
        let d = two_class(&[0.0], &[1.0]);
        assert!(fit_kde(&d, 0.0, Kernel::Gaussian).is_err());
        assert!(fit_kde(&d, -1.0, Kernel::Gaussian).is_err());
    }

    #[test]
    fn densities_integrate_to_one_1d() {
        let d = two_class(&[-1.0, 0.2, 0.5, 3.0], &[2.0, 9.0]);
        for kernel in [Kernel::Gaussian, Kernel::Epanechnikov] {
            let m = fit_kde(&d, 0.8, kernel).unwrap();
            // split at the kinks so Simpson sees smooth pieces
            let mut knots: Vec<f64> = vec![-20.0, 30.0];
            for p in [-1.0, 0.2, 0.5, 3.0, 2.0, 9.0] {
                knots.extend([p - 0.8, p + 0.8]);
            }
            knots.sort_by(f64::total_cmp);
            let mut i0 = 0.0;
            let mut i1 = 0.0;
            for w in knots.windows(2) {
                i0 += adaptive_simpson(&|x| m.density0(&[x]), w[0], w[1], 1e-12);
                i1 += adaptive_simpson(&|x| m.density1(&[x]), w[0], w[1], 1e-12);
            }
            assert!((i0 - 1.0).abs() < 1e-3, "{kernel:?} f0 {i0}");
            assert!((i1 - 1.0).abs() < 1e-3, "{kernel:?} f1 {i1}");
        }
    }

    #[test]
    fn densities_integrate_to_one_2d() {
        let rows = [[0.0, 0.0], [1.0, -0.5], [3.0, 3.0], [-2.0, 1.0]];
        let d = LabeledDataset::from_rows(&rows, vec![0, 0, 1, 1]).unwrap();
        let m = fit_kde(&d, 0.6, Kernel::Gaussian).unwrap();
        let (lo, hi, k) = (-8.0, 10.0, 361);
        let step = (hi - lo) / (k - 1) as f64;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let x = [lo + i as f64 * step, lo + j as f64 * step];
                s0 += m.density0(&x);
                s1 += m.density1(&x);
            }
        }
        assert!((s0 * step * step - 1.0).abs() < 1e-3);
        assert!((s1 * step * step - 1.0).abs() < 1e-3);
    }

    #[test]
    fn windowed_sum_matches_full_sum() {
        let xs0: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let xs1: Vec<f64> = (0..300).map(|i| (i as f64 * 0.11).cos() * 40.0).collect();
        let d = two_class(&xs0, &xs1);
        let m = fit_kde(&d, 0.05, Kernel::Gaussian).unwrap();
        for q in [-30.0, -2.5, 0.0, 1.7, 33.3] {
            let full: f64 = xs1.iter().map(|p| std_normal_pdf((q - p) / 0.05)).sum::<f64>() / (300.0 * 0.05);
            assert!((m.density1(&[q]) - full).abs() <= 1e-14 * full.max(1e-300));
        }
    }

    #[test]
    fn silverman_uses_robust_spread() {
        let xs: Vec<[f64; 1]> = (0..100).map(|i| [i as f64]).chain([[1e9]]).collect();
        let fm = FeatureMatrix::from_rows(&xs).unwrap();
        let h = silverman_bandwidth(&fm).unwrap();
        assert!(h < 50.0, "outlier must not inflate h: {h}");
        let one = FeatureMatrix::from_rows(&[[2.0]]).unwrap();
        assert_eq!(silverman_bandwidth(&one).unwrap(), 1.06);
    }

    #[test]
    fn unconstrained_and_empty_budget_limits() {
        let xs0: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let xs1: Vec<f64> = (0..80).map(|i| i as f64 * 0.3 - 5.0).collect();
        let d = two_class(&xs0, &xs1);
        let plan = SplitPlan::halves(d.len());
        let full = CapacitySpec::new(5.0, 0.2).unwrap();
        let clf = fit_plugin_classifier(&d, plan, full, Bandwidth::Silverman, Kernel::Gaussian, RngSeed(1)).unwrap();
        assert_eq!(clf.tau(), f64::NEG_INFINITY);
        assert!(clf.predict(d.features()).unwrap().iter().all(|&y| y == MINORITY));

        let tiny = CapacitySpec::new(1e-6, 0.2).unwrap();
        let clf = fit_plugin_classifier(&d, plan, tiny, Bandwidth::Silverman, Kernel::Gaussian, RngSeed(1)).unwrap();
        let (_, a2, _) = split(&d, plan, RngSeed(1)).unwrap();
        assert!(clf.predict(a2.features()).unwrap().iter().all(|&y| y == MAJORITY));
    }

    #[test]
    fn capacity_rule_is_reweighted_bayes_on_grid() {
        let xs0: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let xs1: Vec<f64> = (0..120).map(|i| (i as f64 * 0.3).cos() * 6.0 + 2.0).collect();
        let d = two_class(&xs0, &xs1);
        let cap = CapacitySpec::new(2.0, 0.2).unwrap();
        let clf = fit_plugin_classifier(&d, SplitPlan::halves(d.len()), cap, Bandwidth::Silverman, Kernel::Gaussian, RngSeed(4))
            .unwrap();
        let gamma = clf.tau();
        assert!(gamma.is_finite() && gamma > 0.0);
        // pi0' / pi1' = 1 / gamma
        let pi0p = 1.0 / (1.0 + gamma);
        let m = clf.scorer();
        for i in 0..=2000 {
            let x = [-10.0 + i as f64 * 0.01];
            let bayes = pi0p * m.density0(&x) > (1.0 - pi0p) * m.density1(&x);
            let cap_rule = clf.predict_one(&x).unwrap() == MINORITY;
            let near_tie = (m.ratio(&x) - gamma).abs() <= 1e-9 * gamma;
            assert!(bayes == cap_rule || near_tie, "x = {}", x[0]);
        }
    }

    #[test]
    fn grid_export_csv() {
        let d = two_class(&[0.0, 0.5], &[3.0, 4.0]);
        let m = fit_kde(&d, 1.0, Kernel::Gaussian).unwrap();
        let clf = CalibratedClassifier::new(m, 1.0);
        let cells = grid_evaluate(&clf, &[(-1.0, 5.0)], 7).unwrap();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[0].label, MINORITY);
        assert_eq!(cells[6].label, MAJORITY);
        let mut buf = Vec::new();
        write_grid_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,f0_hat,f1_hat,score,label\n"));
        assert_eq!(text.lines().count(), 8);
        assert!(grid_evaluate(&clf, &[(0.0, 1.0), (0.0, 1.0)], 3).is_err());
    }
}
