//! Confusion statistics and the capacity-adjusted detection measure.
//!
//! `M̂` is the test-fold sensitivity, discounted by `w = budget / rate` when
//! the classifier flags more rows than the capacity allows (the overflow is
//! assumed to be triaged at random).

use serde::{Deserialize, Serialize};

use crate::data::{CapacitySpec, MINORITY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Minority rows predicted minority.
    pub tp0: usize,
    /// Minority rows predicted majority.
    pub fn0: usize,
    /// Majority rows predicted majority.
    pub tn1: usize,
    /// Majority rows predicted minority.
    pub fp1: usize,
    /// `None` when the fold has no minority rows.
    pub sensitivity: Option<f64>,
    /// `None` when the fold has no majority rows.
    pub specificity: Option<f64>,
    pub accuracy: f64,
    /// Fraction of rows predicted minority.
    pub positive_rate: f64,
    /// `None` exactly when `sensitivity` is undefined.
    pub m_hat: Option<f64>,
    /// Capacity discount actually applied, in (0, 1].
    pub w: f64,
}

impl MetricReport {
    pub fn n(&self) -> usize {
        self.tp0 + self.fn0 + self.tn1 + self.fp1
    }

    pub fn selected(&self) -> usize {
        self.tp0 + self.fp1
    }
}

fn check_lengths(predictions: &[u8], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    Ok(())
}

fn confusion(predictions: &[u8], labels: &[u8]) -> [usize; 4] {
    let mut c = [0usize; 4]; // tp0, fn0, tn1, fp1
    for (&p, &y) in predictions.iter().zip(labels) {
        let slot = match (y == MINORITY, p == MINORITY) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        c[slot] += 1;
    }
    c
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Sensitivity, specificity and accuracy; undefined rates come back as `None`.
pub fn sensitivity_specificity(
    predictions: &[u8],
    labels: &[u8],
) -> Result<(Option<f64>, Option<f64>, f64)> {
    check_lengths(predictions, labels)?;
    let [tp0, fn0, tn1, fp1] = confusion(predictions, labels);
    Ok((
        ratio(tp0, tp0 + fn0),
        ratio(tn1, tn1 + fp1),
        (tp0 + tn1) as f64 / predictions.len() as f64,
    ))
}

/// Full report including the capacity-adjusted `M̂` under `cap`.
pub fn evaluate(predictions: &[u8], labels: &[u8], cap: CapacitySpec) -> Result<MetricReport> {
    check_lengths(predictions, labels)?;
    let n = predictions.len();
    let [tp0, fn0, tn1, fp1] = confusion(predictions, labels);
    let selected = tp0 + fp1;
    let w = if selected <= cap.max_selected(n) {
        1.0
    } else {
        cap.budget() * n as f64 / selected as f64
    };
    let sensitivity = ratio(tp0, tp0 + fn0);
    Ok(MetricReport {
        tp0,
        fn0,
        tn1,
        fp1,
        sensitivity,
        specificity: ratio(tn1, tn1 + fp1),
        accuracy: (tp0 + tn1) as f64 / n as f64,
        positive_rate: selected as f64 / n as f64,
        m_hat: sensitivity.map(|s| s * w),
        w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cap(b: f64, pi0: f64) -> CapacitySpec {
        CapacitySpec::new(b, pi0).unwrap()
    }

    #[test]
    fn on_budget_selection_is_not_discounted() {
        // n = 100, budget 0.1 -> 10 flagged; 8 minority rows, 4 caught.
        let mut labels = vec![1u8; 100];
        labels[..8].fill(0);
        let mut pred = vec![1u8; 100];
        pred[..4].fill(0);
        pred[50..56].fill(0);
        let r = evaluate(&pred, &labels, cap(2.0, 0.05)).unwrap();
        assert_eq!(r.selected(), 10);
        assert_eq!(r.w, 1.0);
        assert_eq!(r.m_hat, Some(0.5));
    }

    #[test]
    fn over_budget_selection_is_discounted() {
        // budget 0.1 of n = 100 allows 10, classifier flags 20 and catches 6 of 10.
        let mut labels = vec![1u8; 100];
        labels[..10].fill(0);
        let mut pred = vec![1u8; 100];
        pred[..6].fill(0);
        pred[30..44].fill(0);
        let r = evaluate(&pred, &labels, cap(1.0, 0.1)).unwrap();
        assert_eq!(r.sensitivity, Some(0.6));
        assert!((r.w - 0.5).abs() < 1e-15);
        assert!((r.m_hat.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn credit_capacity_interpretation() {
        // 10,000 clients, 200 defaulters, capacity 600. M̂ is a sensitivity, so
        // M̂ = 0.3 on budget means 60 of the 200 defaulters are caught.
        let c = cap(3.0, 0.02);
        assert_eq!(c.max_selected(10_000), 600);
        let mut labels = vec![1u8; 10_000];
        labels[..200].fill(0);
        let mut pred = vec![1u8; 10_000];
        pred[..60].fill(0);
        pred[200..740].fill(0);
        let r = evaluate(&pred, &labels, c).unwrap();
        assert_eq!(r.selected(), 600);
        assert!((r.m_hat.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!((r.m_hat.unwrap() * 200.0).round() as usize, r.tp0);
    }

    #[test]
    fn basic_rates() {
        let labels = [0u8, 0, 1, 1, 1];
        assert_eq!(
            sensitivity_specificity(&labels, &labels).unwrap(),
            (Some(1.0), Some(1.0), 1.0)
        );
        let all_major = [1u8; 5];
        let (s, sp, _) = sensitivity_specificity(&all_major, &labels).unwrap();
        assert_eq!((s, sp), (Some(0.0), Some(1.0)));
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        assert_eq!(
            sensitivity_specificity(&flipped, &labels).unwrap(),
            (Some(0.0), Some(0.0), 0.0)
        );
    }

    #[test]
    fn undefined_sensitivity_is_flagged() {
        let r = evaluate(&[0, 1], &[1, 1], cap(1.0, 0.5)).unwrap();
        assert_eq!(r.sensitivity, None);
        assert_eq!(r.m_hat, None);
        assert_eq!(r.specificity, Some(0.5));
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            evaluate(&[0, 1], &[0], cap(1.0, 0.5)),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(evaluate(&[], &[], cap(1.0, 0.5)), Err(Error::EmptyInput(_))));
    }

    proptest! {
        #[test]
        fn m_hat_never_exceeds_sensitivity(
            pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60),
            b in 0.1f64..5.0,
            pi0 in 0.01f64..0.19,
        ) {
            let (pred, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let r = evaluate(&pred, &labels, cap(b, pi0)).unwrap();
            prop_assert!(r.w > 0.0 && r.w <= 1.0);
            let budget = b * pi0;
            prop_assert!((r.w - (budget / r.positive_rate).min(1.0)).abs() < 1e-9 || r.positive_rate == 0.0);
            if let (Some(m), Some(s)) = (r.m_hat, r.sensitivity) {
                prop_assert!(m <= s);
            }
        }

        #[test]
        fn evaluation_is_permutation_invariant(
            pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..40),
            rot in 0usize..40,
        ) {
            let c = cap(2.0, 0.1);
            let (pred, labels): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let mut rotated = pairs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let (p2, l2): (Vec<u8>, Vec<u8>) = rotated.into_iter().unzip();
            prop_assert_eq!(evaluate(&pred, &labels, c).unwrap(), evaluate(&p2, &l2, c).unwrap());
        }
    }
}
