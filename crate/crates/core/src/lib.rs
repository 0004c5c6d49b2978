//! Binary classification under a capacity constraint on how often the
//! minority class (label `0`) may be predicted.
//!
//! A classifier `g` is feasible for capacity `b` when
//! `P(g(X) = 0) <= b * pi0`. Scoring models rank rows by how strongly they
//! look like the minority class; [`calib`] turns any score into a feasible
//! classifier by thresholding at an order statistic of a held-out fold.

pub mod calib;
pub mod data;
pub mod error;
pub mod forest;
pub mod ingest;
pub mod kde;
pub mod knn;
pub mod metrics;
pub mod numeric;
pub mod smote;
pub mod svm;
pub mod synth;

pub use calib::{
    calibrate, calibrate_threshold, constrained_detection, threshold_labels, CalibratedClassifier,
    Calibration, MinorityScorer,
};
pub use data::{
    class_counts, split, split_indices, CapacitySpec, FeatureMatrix, LabeledDataset, RngSeed,
    SplitPlan, MAJORITY, MINORITY,
};
pub use error::{Error, Result};
pub use metrics::{evaluate, sensitivity_specificity, MetricReport};
