//! Capacity calibration: turn any minority score into a threshold that
//! respects the budget on a held-out calibration fold.
//!
//! The rule is an order statistic. With `m = floor(budget * n)` the threshold
//! is the `(m+1)`-th largest calibration score and a row is flagged only when
//! its score is *strictly* above it, so ties at the threshold are never
//! selected and the calibration-fold rate can never exceed the budget. Among
//! all thresholds meeting the budget it is the smallest, hence it admits the
//! largest feasible selection.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::data::{CapacitySpec, FeatureMatrix, MAJORITY, MINORITY};
use crate::error::{Error, Result};

/// A fitted model producing a real score per point, oriented so that larger
/// means more minority-like.
pub trait MinorityScorer: Send + Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &[f64]) -> f64;

    fn score_all(&self, points: &FeatureMatrix) -> Result<Vec<f64>> {
        check_dim(self.dim(), points.dim())?;
        Ok(points
            .as_slice()
            .par_chunks_exact(points.dim())
            .map(|x| self.score(x))
            .collect())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

impl<S: MinorityScorer + ?Sized> MinorityScorer for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }
    fn score_all(&self, points: &FeatureMatrix) -> Result<Vec<f64>> {
        (**self).score_all(points)
    }
}

impl<S: MinorityScorer + ?Sized> MinorityScorer for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }
    fn score_all(&self, points: &FeatureMatrix) -> Result<Vec<f64>> {
        (**self).score_all(points)
    }
}

/// Outcome of calibrating a threshold on one fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub tau: f64,
    pub n: usize,
    /// `floor(budget * n)`.
    pub max_selected: usize,
    /// Rows strictly above `tau`.
    pub selected: usize,
    /// Rows whose score equals `tau`; a large atom here means the budget is
    /// left partly unused.
    pub ties_at_tau: usize,
}

impl Calibration {
    pub fn positive_rate(&self) -> f64 {
        self.selected as f64 / self.n as f64
    }
}

fn desc(a: &f64, b: &f64) -> Ordering {
    b.total_cmp(a)
}

/// Order-statistic calibration with diagnostics.
pub fn calibrate(scores: &[f64], cap: CapacitySpec) -> Result<Calibration> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("calibration scores"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("calibration score is NaN".into()));
    }
    let n = scores.len();
    let m = cap.max_selected(n);
    let tau = if cap.budget() >= 1.0 || m >= n {
        f64::NEG_INFINITY
    } else {
        let mut buf = scores.to_vec();
        let (_, nth, _) = buf.select_nth_unstable_by(m, desc);
        *nth
    };
    let selected = scores.iter().filter(|&&s| s > tau).count();
    let ties_at_tau = scores.iter().filter(|&&s| s == tau).count();
    debug_assert!(selected <= m);
    Ok(Calibration {
        tau,
        n,
        max_selected: m,
        selected,
        ties_at_tau,
    })
}

/// Smallest threshold whose calibration-fold selection stays within budget.
/// `-inf` when the budget admits every row.
pub fn calibrate_threshold(scores: &[f64], cap: CapacitySpec) -> Result<f64> {
    calibrate(scores, cap).map(|c| c.tau)
}

/// Threshold plus the empirical joint detection rate
/// `P̂00 = #{score > tau, label = 0} / n` it achieves on the fold.
pub fn constrained_detection(scores: &[f64], labels: &[u8], cap: CapacitySpec) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let tau = calibrate_threshold(scores, cap)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| s > tau && y == MINORITY)
        .count();
    Ok((tau, hits as f64 / scores.len() as f64))
}

/// Label 0 where the score is strictly above `tau`.
pub fn threshold_labels(scores: &[f64], tau: f64) -> Vec<u8> {
    scores
        .iter()
        .map(|&s| if s > tau { MINORITY } else { MAJORITY })
        .collect()
}

/// A scorer together with a threshold.
#[derive(Debug, Clone)]
pub struct CalibratedClassifier<S> {
    scorer: S,
    tau: f64,
}

impl<S: MinorityScorer> CalibratedClassifier<S> {
    pub fn new(scorer: S, tau: f64) -> Self {
        Self { scorer, tau }
    }

    /// Calibrates `tau` on the scores of `calib_points`.
    pub fn fit(scorer: S, calib_points: &FeatureMatrix, cap: CapacitySpec) -> Result<Self> {
        let scores = scorer.score_all(calib_points)?;
        let tau = calibrate_threshold(&scores, cap)?;
        Ok(Self { scorer, tau })
    }

    /// Never flags anything: the `b -> 0` limit.
    pub fn never_select(scorer: S) -> Self {
        Self::new(scorer, f64::INFINITY)
    }

    /// Flags everything: the unconstrained `b = 1/pi0` limit.
    pub fn select_all(scorer: S) -> Self {
        Self::new(scorer, f64::NEG_INFINITY)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<u8> {
        check_dim(self.scorer.dim(), x.len())?;
        Ok(if self.scorer.score(x) > self.tau {
            MINORITY
        } else {
            MAJORITY
        })
    }

    pub fn predict(&self, points: &FeatureMatrix) -> Result<Vec<u8>> {
        let scores = self.scorer.score_all(points)?;
        Ok(threshold_labels(&scores, self.tau))
    }
}
