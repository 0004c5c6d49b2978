//! Synthetic scenarios and their analytic oracles.
//!
//! * One dimension: minority `N(0, 1)` against a majority Cauchy centred at
//!   `mu`. The density ratio `f0 / f1` has at most two local maxima, so every
//!   super-level set `A_gamma = {f0 > gamma f1}` is a union of at most two
//!   intervals. Interval endpoints are found on monotone pieces delimited by
//!   the critical points of the log-ratio (roots of a cubic), and masses use
//!   the closed-form normal and Cauchy CDFs.
//! * Two dimensions: minority uniform in an inner ellipse, majority uniform
//!   in a larger ellipse containing it.

use std::f64::consts::PI;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CapacitySpec, FeatureMatrix, LabeledDataset, RngSeed, MAJORITY, MINORITY};
use crate::error::{Error, Result};
use crate::numeric::{
    adaptive_simpson, bisect, cauchy_mass, real_cubic_roots, std_normal_mass, std_normal_pdf,
};

/// Normal minority against a Cauchy(`mu`, 1) majority.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDimSpec {
    pub mu: f64,
    pub pi0: f64,
}

impl OneDimSpec {
    pub fn new(mu: f64, pi0: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu = {mu} must be finite")));
        }
        if !(0.0..=1.0).contains(&pi0) {
            return Err(Error::InvalidParameter(format!("pi0 = {pi0} must lie in [0, 1]")));
        }
        Ok(Self { mu, pi0 })
    }

    pub fn f0(&self, x: f64) -> f64 {
        std_normal_pdf(x)
    }

    pub fn f1(&self, x: f64) -> f64 {
        let t = x - self.mu;
        1.0 / (PI * (1.0 + t * t))
    }

    /// `ln f0(x) - ln f1(x)`.
    pub fn log_ratio(&self, x: f64) -> f64 {
        let t = x - self.mu;
        -0.5 * x * x + (PI.ln() - 0.5 * (2.0 * PI).ln()) + (1.0 + t * t).ln()
    }

    /// Mixture mass `pi0 F0 + pi1 F1` of the interval `(a, b)`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.pi0 * std_normal_mass(a, b) + (1.0 - self.pi0) * cauchy_mass(self.mu, a, b)
    }

    fn require_proper_prior(&self) -> Result<()> {
        if !(self.pi0 > 0.0 && self.pi0 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pi0 = {} must lie in (0, 1) for the analytic oracle",
                self.pi0
            )));
        }
        Ok(())
    }

    /// Critical points of the log-ratio, ascending.
    fn critical_points(&self) -> Vec<f64> {
        // d/dx log_ratio = 0  <=>  t^3 + mu t^2 - t + mu = 0 with t = x - mu
        real_cubic_roots(self.mu, -1.0, self.mu)
            .into_iter()
            .map(|t| t + self.mu)
            .collect()
    }

    /// Largest value of `f0 / f1` over the real line (in log scale).
    pub fn max_log_ratio(&self) -> f64 {
        self.critical_points()
            .into_iter()
            .map(|x| self.log_ratio(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Finite union of disjoint open intervals, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet(pub Vec<(f64, f64)>);

impl IntervalSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn real_line() -> Self {
        Self(vec![(f64::NEG_INFINITY, f64::INFINITY)])
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0.iter().any(|&(a, b)| a < x && x < b)
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.0
    }

    /// Outermost endpoints, `None` when empty.
    pub fn hull(&self) -> Option<(f64, f64)> {
        Some((self.0.first()?.0, self.0.last()?.1))
    }
}

/// `A_gamma = {x : f0(x) > gamma f1(x)}`.
pub fn level_region(spec: &OneDimSpec, gamma: f64) -> Result<IntervalSet> {
    if gamma <= 0.0 {
        return Ok(IntervalSet::real_line());
    }
    let lg = gamma.ln();
    let h = |x: f64| spec.log_ratio(x) - lg;
    let crit = spec.critical_points();

    let far_left = outward_negative(&h, crit[0], -1.0)?;
    let far_right = outward_negative(&h, *crit.last().unwrap(), 1.0)?;
    let mut knots = vec![far_left];
    knots.extend(crit.iter().copied());
    knots.push(far_right);

    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ha, hb) = (h(a), h(b));
        if ha.signum() != hb.signum() && ha != 0.0 && hb != 0.0 {
            roots.push(bisect(h, a, b)?);
        }
    }
    // h < 0 at both far ends, so roots alternate entry / exit.
    let mut out = Vec::new();
    for pair in roots.chunks(2) {
        if let [a, b] = *pair {
            out.push((a, b));
        }
    }
    Ok(IntervalSet(out))
}

fn outward_negative<F: Fn(f64) -> f64>(h: &F, start: f64, dir: f64) -> Result<f64> {
    let mut step = 1.0;
    for _ in 0..64 {
        let x = start + dir * step;
        if h(x) < 0.0 {
            return Ok(x);
        }
        step *= 2.0;
    }
    Err(Error::NonConvergence {
        what: "level-set bracketing",
        residual: f64::NAN,
    })
}

/// `P_gamma`: mixture mass of `A_gamma`, closed form.
pub fn p_gamma(spec: &OneDimSpec, gamma: f64) -> Result<f64> {
    let region = level_region(spec, gamma)?;
    Ok(region.intervals().iter().map(|&(a, b)| spec.mass(a, b)).sum())
}

/// `P_gamma` by adaptive Simpson quadrature of the mixture density over the
/// level set; an independent route to [`p_gamma`].
pub fn p_gamma_quadrature(spec: &OneDimSpec, gamma: f64, tol: f64) -> Result<f64> {
    let region = level_region(spec, gamma)?;
    let dens = |x: f64| spec.pi0 * spec.f0(x) + (1.0 - spec.pi0) * spec.f1(x);
    let mut total = 0.0;
    for &(a, b) in region.intervals() {
        if a.is_infinite() || b.is_infinite() {
            return Ok(1.0);
        }
        total += adaptive_simpson(&dens, a, b, tol);
    }
    Ok(total)
}

/// Threshold `gamma*` with `P_gamma* = budget` and its region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaStar {
    pub gamma: f64,
    pub region: IntervalSet,
    /// `P_gamma* - budget`.
    pub residual: f64,
}

pub fn analytic_gamma_star(spec: &OneDimSpec, cap: CapacitySpec) -> Result<GammaStar> {
    spec.require_proper_prior()?;
    let budget = cap.budget();
    if budget >= 1.0 {
        return Ok(GammaStar {
            gamma: 0.0,
            region: IntervalSet::real_line(),
            residual: 0.0,
        });
    }
    // P_gamma decreases from 1 (gamma -> 0) to 0 (gamma >= max ratio); bisect on ln gamma.
    let hi = spec.max_log_ratio();
    let mut lo = hi - 1.0;
    while p_gamma(spec, lo.exp())? <= budget {
        lo -= 2.0 * (hi - lo);
        if lo < -700.0 {
            return Err(Error::NonConvergence {
                what: "gamma* lower bracket",
                residual: budget,
            });
        }
    }
    let f = |lg: f64| p_gamma(spec, lg.exp()).map(|p| p - budget).unwrap_or(f64::NAN);
    let lg = bisect(f, lo, hi)?;
    let gamma = lg.exp();
    let residual = p_gamma(spec, gamma)? - budget;
    if residual.abs() > 1e-6 {
        return Err(Error::NonConvergence {
            what: "gamma* bisection",
            residual,
        });
    }
    Ok(GammaStar {
        gamma,
        region: level_region(spec, gamma)?,
        residual,
    })
}

/// Bayes region `{pi0 f0 > pi1 f1}`.
pub fn analytic_bayes_region(spec: &OneDimSpec) -> Result<IntervalSet> {
    spec.require_proper_prior()?;
    level_region(spec, (1.0 - spec.pi0) / spec.pi0)
}

/// Shift `mu_c` at which the Bayes region appears: the crossing equation
/// `pi0 f0 = pi1 f1` touches tangentially. Found by bisection on `mu` of the
/// maximal log-ratio margin.
pub fn mu_c(pi0: f64) -> Result<f64> {
    if !(pi0 > 0.0 && pi0 < 0.5) {
        return Err(Error::InvalidParameter(format!("pi0 = {pi0} must lie in (0, 0.5)")));
    }
    let offset = (pi0 / (1.0 - pi0)).ln();
    let margin = |mu: f64| {
        let s = OneDimSpec { mu, pi0 };
        s.max_log_ratio() + offset
    };
    if margin(0.0) >= 0.0 {
        return Err(Error::NonConvergence {
            what: "mu_c bracket (Bayes region nonempty at mu = 0)",
            residual: margin(0.0),
        });
    }
    let mut hi = 1.0;
    while margin(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NonConvergence {
                what: "mu_c upper bracket",
                residual: margin(hi),
            });
        }
    }
    bisect(margin, 0.0, hi)
}

/// `n` i.i.d. draws with `P(Y = 0) = pi0`.
pub fn gen_1d(spec: &OneDimSpec, n: usize, seed: RngSeed) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::EmptyInput("sample size"));
    }
    let mut rng = seed.rng();
    let cauchy = Cauchy::new(spec.mu, 1.0).expect("unit scale");
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<f64>() < spec.pi0 {
            labels.push(MINORITY);
            values.push(StandardNormal.sample(&mut rng));
        } else {
            labels.push(MAJORITY);
            values.push(cauchy.sample(&mut rng));
        }
    }
    LabeledDataset::new(FeatureMatrix::new(values, n, 1)?, labels)
}

/// Nested-ellipse scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    /// Semi-axes of the minority ellipse.
    pub inner: (f64, f64),
    /// Semi-axes of the majority ellipse.
    pub outer: (f64, f64),
    pub n0: usize,
    pub pi0: f64,
}

impl EllipseSpec {
    /// Unit disk inside a 4 x 2.5 ellipse: area ratio 10, so at `pi0 = 1/11`
    /// the expected majority count inside the disk equals `n0`.
    pub fn with_defaults(n0: usize, pi0: f64) -> Result<Self> {
        let s = Self {
            inner: (1.0, 1.0),
            outer: (4.0, 2.5),
            n0,
            pi0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (ix, iy) = self.inner;
        let (ox, oy) = self.outer;
        if !(ix > 0.0 && iy > 0.0 && ix < ox && iy < oy) {
            return Err(Error::InvalidParameter(
                "inner ellipse must lie strictly inside the outer one".into(),
            ));
        }
        if !(self.pi0 > 0.0 && self.pi0 < 1.0) {
            return Err(Error::InvalidParameter(format!("pi0 = {} must lie in (0, 1)", self.pi0)));
        }
        if self.n0 == 0 {
            return Err(Error::EmptyInput("minority count"));
        }
        Ok(())
    }

    pub fn majority_count(&self) -> usize {
        (self.n0 as f64 * (1.0 - self.pi0) / self.pi0).round() as usize
    }

    pub fn area_ratio(&self) -> f64 {
        (self.outer.0 * self.outer.1) / (self.inner.0 * self.inner.1)
    }

    pub fn in_inner(&self, x: f64, y: f64) -> bool {
        (x / self.inner.0).powi(2) + (y / self.inner.1).powi(2) <= 1.0
    }
}

fn uniform_in_ellipse<R: Rng>(rng: &mut R, (ax, ay): (f64, f64)) -> [f64; 2] {
    loop {
        let u = rng.random_range(-1.0..1.0);
        let v = rng.random_range(-1.0..1.0);
        if u * u + v * v <= 1.0 {
            return [u * ax, v * ay];
        }
    }
}

/// `n0` minority points uniform in the inner ellipse and
/// `round(n0 (1 - pi0) / pi0)` majority points uniform in the outer one,
/// in shuffled order.
pub fn gen_ellipses(spec: &EllipseSpec, seed: RngSeed) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = seed.rng();
    let n1 = spec.majority_count();
    let mut rows: Vec<([f64; 2], u8)> = Vec::with_capacity(spec.n0 + n1);
    for _ in 0..spec.n0 {
        rows.push((uniform_in_ellipse(&mut rng, spec.inner), MINORITY));
    }
    for _ in 0..n1 {
        rows.push((uniform_in_ellipse(&mut rng, spec.outer), MAJORITY));
    }
    rows.shuffle(&mut rng);
    let values = rows.iter().flat_map(|(p, _)| p.iter().copied()).collect();
    let labels = rows.iter().map(|(_, y)| *y).collect();
    LabeledDataset::new(FeatureMatrix::new(values, spec.n0 + n1, 2)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::class_counts;

    #[test]
    fn mu_c_reported_values() {
        assert!((mu_c(0.05).unwrap() - 3.522).abs() < 0.01);
        assert!((mu_c(0.01).unwrap() - 8.721).abs() < 0.01);
    }

    #[test]
    fn mu_c_monotone_in_pi0() {
        let a = mu_c(0.05).unwrap();
        let m = mu_c(0.02).unwrap();
        let b = mu_c(0.01).unwrap();
        assert!(a < m && m < b);
        assert!(mu_c(0.45).is_err());
    }

    #[test]
    fn mu_c_is_a_tangency() {
        let pi0 = 0.01;
        let mc = mu_c(pi0).unwrap();
        let below = analytic_bayes_region(&OneDimSpec::new(mc - 1e-3, pi0).unwrap()).unwrap();
        let above = analytic_bayes_region(&OneDimSpec::new(mc + 1e-3, pi0).unwrap()).unwrap();
        assert!(below.is_empty());
        assert_eq!(above.intervals().len(), 1);
    }

    #[test]
    fn zero_gamma_is_whole_line() {
        let s = OneDimSpec::new(10.0, 0.01).unwrap();
        assert_eq!(p_gamma(&s, 0.0).unwrap(), 1.0);
        assert!(level_region(&s, 0.0).unwrap().contains(-1e9));
    }

    #[test]
    fn full_budget_gives_whole_line() {
        let s = OneDimSpec::new(10.0, 0.01).unwrap();
        let g = analytic_gamma_star(&s, CapacitySpec::new(100.0, 0.01).unwrap()).unwrap();
        assert_eq!(g.gamma, 0.0);
        assert_eq!(g.region, IntervalSet::real_line());
    }

    #[test]
    fn bayes_region_below_and_above_mu_c() {
        let s = OneDimSpec::new(5.0, 0.01).unwrap();
        assert!(analytic_bayes_region(&s).unwrap().is_empty());

        let s = OneDimSpec::new(10.0, 0.01).unwrap();
        let r = analytic_bayes_region(&s).unwrap();
        assert_eq!(r.intervals().len(), 1);
        let (x1, x2) = r.intervals()[0];
        for x in [x1, x2] {
            let lhs = s.pi0 * s.f0(x);
            let rhs = (1.0 - s.pi0) * s.f1(x);
            assert!((lhs - rhs).abs() < 1e-8 * rhs.max(1e-300), "x = {x}");
            assert!((lhs - rhs).abs() < 1e-8);
        }
    }

    #[test]
    fn balanced_prior_contains_mode() {
        let s = OneDimSpec::new(40.0, 0.49).unwrap();
        assert!(analytic_bayes_region(&s).unwrap().contains(0.0));
    }

    #[test]
    fn p_gamma_nonincreasing() {
        let s = OneDimSpec::new(3.0, 0.05).unwrap();
        let mut prev = 1.0;
        for i in 0..200 {
            let g = 0.01 * 1.06f64.powi(i);
            let p = p_gamma(&s, g).unwrap();
            assert!(p <= prev + 1e-15, "gamma {g}: {p} > {prev}");
            prev = p;
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for &(mu, pi0, g) in &[(10.0, 0.01, 26.0), (3.0, 0.05, 0.5), (0.0, 0.2, 0.9), (1.0, 0.3, 2.0)] {
            let s = OneDimSpec::new(mu, pi0).unwrap();
            let a = p_gamma(&s, g).unwrap();
            let b = p_gamma_quadrature(&s, g, 1e-13).unwrap();
            assert!((a - b).abs() < 1e-10, "mu {mu} gamma {g}: {a} vs {b}");
        }
    }

    #[test]
    fn two_interval_level_sets_exist() {
        // For small |mu| the log-ratio has two local maxima; pick gamma
        // between the saddle value and the smaller peak.
        let s = OneDimSpec::new(0.1, 0.3).unwrap();
        let crit = s.critical_points();
        assert_eq!(crit.len(), 3);
        let vals: Vec<f64> = crit.iter().map(|&x| s.log_ratio(x)).collect();
        let lg = 0.5 * (vals[1] + vals[0].min(vals[2]));
        let r = level_region(&s, lg.exp()).unwrap();
        assert_eq!(r.intervals().len(), 2);
        for &(a, b) in r.intervals() {
            assert!((s.log_ratio(a) - lg).abs() < 1e-10);
            assert!((s.log_ratio(b) - lg).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_star_hits_budget() {
        let s = OneDimSpec::new(10.0, 0.01).unwrap();
        let g = analytic_gamma_star(&s, CapacitySpec::new(2.0, 0.01).unwrap()).unwrap();
        assert!(g.residual.abs() <= 1e-6);
        let (lo, hi) = g.region.hull().unwrap();
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn gamma_star_at_bayes_mass_recovers_bayes_region() {
        let s = OneDimSpec::new(10.0, 0.01).unwrap();
        let bayes = analytic_bayes_region(&s).unwrap();
        let (a, b) = bayes.intervals()[0];
        let mass = s.mass(a, b);
        let cap = CapacitySpec::new(mass / s.pi0, s.pi0).unwrap();
        let g = analytic_gamma_star(&s, cap).unwrap();
        let (c, d) = g.region.intervals()[0];
        assert!((a - c).abs() < 1e-6 && (b - d).abs() < 1e-6);
        assert!((g.gamma - (1.0 - s.pi0) / s.pi0).abs() < 1e-4 * g.gamma);
    }

    #[test]
    fn gen_1d_moments_with_pure_minority() {
        let s = OneDimSpec::new(3.0, 1.0).unwrap();
        let d = gen_1d(&s, 100_000, RngSeed(5)).unwrap();
        assert_eq!(class_counts(&d).0, 100_000);
        let xs = d.features().column(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn gen_1d_label_rate_is_binomial() {
        let s = OneDimSpec::new(10.0, 0.01).unwrap();
        let d = gen_1d(&s, 1000, RngSeed(11)).unwrap();
        let c0 = class_counts(&d).0 as f64;
        // mean 10, sd ~3.15; 4 sd band
        assert!((c0 - 10.0).abs() < 4.0 * (1000.0f64 * 0.01 * 0.99).sqrt());
    }

    #[test]
    fn cauchy_majority_has_heavier_tails() {
        let s = OneDimSpec::new(0.0, 0.5).unwrap();
        let d = gen_1d(&s, 200_000, RngSeed(3)).unwrap();
        let (mut tail0, mut n0, mut tail1, mut n1) = (0usize, 0usize, 0usize, 0usize);
        for (x, &y) in d.features().column(0).iter().zip(d.labels()) {
            if y == 0 {
                n0 += 1;
                tail0 += (x.abs() > 4.0) as usize;
            } else {
                n1 += 1;
                tail1 += (x.abs() > 4.0) as usize;
            }
        }
        let p1 = tail1 as f64 / n1 as f64;
        // P(|C| > 4) = 1 - 2 atan(4) / pi ~ 2 / (4 pi)
        let exact = 1.0 - 2.0 * 4f64.atan() / PI;
        assert!((p1 - exact).abs() < 4.0 * (exact * (1.0 - exact) / n1 as f64).sqrt());
        assert!((p1 - 2.0 / (4.0 * PI)).abs() < 0.01);
        assert!((tail0 as f64 / n0 as f64) < 1e-3);
    }

    #[test]
    fn ellipse_support_and_counts() {
        let spec = EllipseSpec::with_defaults(100, 1.0 / 11.0).unwrap();
        assert_eq!(spec.majority_count(), 1000);
        assert!((spec.area_ratio() - 10.0).abs() < 1e-12);
        let d = gen_ellipses(&spec, RngSeed(8)).unwrap();
        assert_eq!(class_counts(&d), (100, 1000));
        for i in d.indices_of(MINORITY) {
            let r = d.row(i);
            assert!(spec.in_inner(r[0], r[1]));
        }
    }

    #[test]
    fn balance_point_majority_inside_inner() {
        let spec = EllipseSpec::with_defaults(100, 1.0 / 11.0).unwrap();
        let reps = 200;
        let mut inside = 0usize;
        for s in 0..reps {
            let d = gen_ellipses(&spec, RngSeed(s)).unwrap();
            inside += d
                .indices_of(MAJORITY)
                .into_iter()
                .filter(|&i| spec.in_inner(d.row(i)[0], d.row(i)[1]))
                .count();
        }
        let mean = inside as f64 / reps as f64;
        // Binomial(1000, 0.1): sd 9.49 per rep, 0.67 over 200 reps.
        assert!((mean - 100.0).abs() < 4.0 * 0.671, "mean {mean}");
    }

    #[test]
    fn majority_uniform_over_sectors() {
        let spec = EllipseSpec::with_defaults(200, 0.02).unwrap();
        let d = gen_ellipses(&spec, RngSeed(21)).unwrap();
        let mut counts = [0f64; 8];
        for i in d.indices_of(MAJORITY) {
            let r = d.row(i);
            let ang = (r[1] / spec.outer.1).atan2(r[0] / spec.outer.0) + PI;
            counts[((ang / (2.0 * PI) * 8.0) as usize).min(7)] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let e = total / 8.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // chi-square(7) 99th percentile
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }
}
