//! Experiment configuration: one JSON document per run.
//!
//! Optional fields have defaults; [`ExperimentConfig::resolved`] fills them in
//! so the copy written next to the results is self-describing.

use std::fmt;
use std::path::{Path, PathBuf};

use capclass::forest::ForestParams;
use capclass::ingest::CsvSchema;
use capclass::kde::{Bandwidth, Kernel};
use capclass::smote::{FactorSchedule, SmoteConfig};
use capclass::svm::SvmParams;
use capclass::CapacitySpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sim1d,
    Sim2d,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Classical,
    Capacity,
    Smote,
    Posthoc,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Classical => "classical",
            Variant::Capacity => "capacity",
            Variant::Smote => "smote",
            Variant::Posthoc => "posthoc",
        }
    }

    pub(crate) fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A method and its options. `variants: null` means every variant the method
/// supports, with `smote` only when SMOTE is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Kde {
        #[serde(default)]
        bandwidth: Bandwidth,
        #[serde(default)]
        kernel: Kernel,
        #[serde(default)]
        variants: Option<Vec<Variant>>,
    },
    Knn {
        /// Defaults to the odd values up to `2 ceil(sqrt(n1)) + 1`.
        #[serde(default)]
        k_grid: Option<Vec<usize>>,
        /// Defaults to `{0.01, ..., 0.99}`.
        #[serde(default)]
        a0_grid: Option<Vec<f64>>,
        #[serde(default)]
        variants: Option<Vec<Variant>>,
    },
    KnnPosthoc {
        /// Defaults to the odd integer nearest `sqrt(n1)`.
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        variants: Option<Vec<Variant>>,
    },
    Svm {
        #[serde(default)]
        params: SvmParams,
        #[serde(default)]
        variants: Option<Vec<Variant>>,
    },
    Forest {
        #[serde(default)]
        params: ForestParams,
        #[serde(default)]
        variants: Option<Vec<Variant>>,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Kde { .. } => "kde",
            MethodSpec::Knn { .. } => "knn",
            MethodSpec::KnnPosthoc { .. } => "knn_posthoc",
            MethodSpec::Svm { .. } => "svm",
            MethodSpec::Forest { .. } => "forest",
        }
    }

    pub fn supported_variants(&self) -> &'static [Variant] {
        use Variant::*;
        match self {
            MethodSpec::Kde { .. } => &[Capacity, Classical],
            MethodSpec::KnnPosthoc { .. } => &[Posthoc],
            _ => &[Capacity, Classical, Smote],
        }
    }

    pub fn variants(&self) -> Option<&[Variant]> {
        match self {
            MethodSpec::Kde { variants, .. }
            | MethodSpec::Knn { variants, .. }
            | MethodSpec::KnnPosthoc { variants, .. }
            | MethodSpec::Svm { variants, .. }
            | MethodSpec::Forest { variants, .. } => variants.as_deref(),
        }
    }

    fn variants_mut(&mut self) -> &mut Option<Vec<Variant>> {
        match self {
            MethodSpec::Kde { variants, .. }
            | MethodSpec::Knn { variants, .. }
            | MethodSpec::KnnPosthoc { variants, .. }
            | MethodSpec::Svm { variants, .. }
            | MethodSpec::Forest { variants, .. } => variants,
        }
    }
}

/// Training and test sizes. Without `n_calib` the `n_train` rows are split in
/// equal halves into the training (A1) and calibration (A2) folds; with it,
/// A1 has `n_train` rows and A2 another `n_calib`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    pub n_train: usize,
    pub n_calib: Option<usize>,
    pub n_test: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            n_train: 8000,
            n_calib: None,
            n_test: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim1dOptions {
    pub mu: Vec<f64>,
}

impl Default for Sim1dOptions {
    fn default() -> Self {
        Self { mu: vec![10.0] }
    }
}

/// Nested ellipses. Training draws have `n0` minority rows, test draws
/// `n0_test` (defaults to `n0`); majority counts follow from `pi0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim2dOptions {
    pub n0: usize,
    pub n0_test: Option<usize>,
    pub inner: (f64, f64),
    pub outer: (f64, f64),
}

impl Default for Sim2dOptions {
    fn default() -> Self {
        Self {
            n0: 100,
            n0_test: None,
            inner: (1.0, 1.0),
            outer: (4.0, 2.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealOptions {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Write the source row indices of every fold under `manifests/`.
    #[serde(default)]
    pub write_manifests: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteOptions {
    pub enabled: bool,
    pub k_neighbors: usize,
    /// Used when `schedule` is absent.
    pub factor: f64,
    /// `(pi0, factor)` knots of a piecewise-linear schedule.
    pub schedule: Option<Vec<(f64, f64)>>,
}

impl Default for SmoteOptions {
    fn default() -> Self {
        let d = SmoteConfig::default();
        Self {
            enabled: false,
            k_neighbors: d.k_neighbors,
            factor: d.factor,
            schedule: None,
        }
    }
}

impl SmoteOptions {
    /// SMOTE settings at prevalence `pi0`.
    pub fn config_for(&self, pi0: f64) -> capclass::Result<SmoteConfig> {
        let factor = match &self.schedule {
            Some(knots) => capclass::smote::schedule_factor(pi0, &FactorSchedule::new(knots.clone())?)?,
            None => self.factor,
        };
        Ok(SmoteConfig {
            k_neighbors: self.k_neighbors,
            factor,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub kind: ExperimentKind,
    pub methods: Vec<MethodSpec>,
    pub b: Vec<f64>,
    pub pi0: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    #[serde(default)]
    pub sizes: Sizes,
    /// When set, `M̂` of every row uses capacity `metric_b * pi0` instead of
    /// the row's own `b`, so rules tuned for different budgets can be compared
    /// under one budget.
    #[serde(default)]
    pub metric_b: Option<f64>,
    #[serde(default)]
    pub sim1d: Sim1dOptions,
    #[serde(default)]
    pub sim2d: Sim2dOptions,
    #[serde(default)]
    pub real: Option<RealOptions>,
    #[serde(default)]
    pub smote: SmoteOptions,
    /// Rescale every feature to zero mean and unit variance using the
    /// training and calibration folds of each repetition.
    #[serde(default)]
    pub standardize: bool,
    /// Off by default: timings would make reruns differ.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Output directory used when none is given on the command line.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_err(path: impl fmt::Display, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path.is_empty() || path == "." { "config".into() } else { path }, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field, reporting the first problem with its path.
    pub fn validate(&self) -> CliResult<()> {
        if self.experiment_id.is_empty() {
            return Err(config_err("experiment_id", "must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "at least one method is required"));
        }
        if self.b.is_empty() {
            return Err(config_err("b", "at least one value is required"));
        }
        if self.pi0.is_empty() {
            return Err(config_err("pi0", "at least one value is required"));
        }
        if self.repetitions == 0 {
            return Err(config_err("repetitions", "must be at least 1"));
        }
        for (i, &p) in self.pi0.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(config_err(format!("pi0[{i}]"), format!("{p} must lie in (0, 1)")));
            }
            for (j, &b) in self.b.iter().enumerate() {
                CapacitySpec::new(b, p).map_err(|e| config_err(format!("b[{j}]"), format!("{e} (pi0 = {p})")))?;
            }
            if let Some(mb) = self.metric_b {
                CapacitySpec::new(mb, p).map_err(|e| config_err("metric_b", e))?;
            }
        }
        for (i, m) in self.methods.iter().enumerate() {
            self.validate_method(i, m)?;
        }
        self.validate_kind()?;
        if self.smote.enabled || self.uses_variant(Variant::Smote) {
            for (i, &p) in self.pi0.iter().enumerate() {
                let cfg = self
                    .smote
                    .config_for(p)
                    .map_err(|e| config_err(format!("smote (pi0[{i}])"), e))?;
                if !(cfg.factor >= 1.0 && cfg.factor.is_finite()) {
                    return Err(config_err("smote.factor", "must be at least 1"));
                }
                if cfg.k_neighbors == 0 {
                    return Err(config_err("smote.k_neighbors", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_method(&self, i: usize, m: &MethodSpec) -> CliResult<()> {
        let at = |field: &str| format!("methods[{i}].{field}");
        if let Some(vs) = m.variants() {
            if vs.is_empty() {
                return Err(config_err(at("variants"), "must not be empty"));
            }
            for (j, v) in vs.iter().enumerate() {
                if !m.supported_variants().contains(v) {
                    return Err(config_err(
                        format!("methods[{i}].variants[{j}]"),
                        format!("{} does not support the {v} variant", m.name()),
                    ));
                }
                if *v == Variant::Smote && !self.smote.enabled {
                    return Err(config_err(
                        format!("methods[{i}].variants[{j}]"),
                        "the smote variant needs smote.enabled = true",
                    ));
                }
            }
        }
        match m {
            MethodSpec::Kde { bandwidth, .. } => {
                if let Bandwidth::Fixed(h) = bandwidth {
                    if !(*h > 0.0 && h.is_finite()) {
                        return Err(config_err(at("bandwidth"), "fixed bandwidth must be positive"));
                    }
                }
            }
            MethodSpec::Knn { k_grid, a0_grid, .. } => {
                if let Some(g) = k_grid {
                    if g.is_empty() || g.contains(&0) {
                        return Err(config_err(at("k_grid"), "must be non-empty and positive"));
                    }
                }
                if let Some(g) = a0_grid {
                    if g.is_empty() || g.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                        return Err(config_err(at("a0_grid"), "values must lie in (0, 1)"));
                    }
                }
            }
            MethodSpec::KnnPosthoc { k, .. } => {
                if *k == Some(0) {
                    return Err(config_err(at("k"), "must be at least 1"));
                }
            }
            MethodSpec::Svm { params, .. } => {
                if !(params.c > 0.0) || !(params.tol > 0.0) || params.max_iter == 0 {
                    return Err(config_err(at("params"), "c and tol must be positive, max_iter at least 1"));
                }
            }
            MethodSpec::Forest { params, .. } => {
                if params.n_trees == 0 || params.min_leaf == 0 || params.mtry == Some(0) {
                    return Err(config_err(at("params"), "n_trees, min_leaf and mtry must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_kind(&self) -> CliResult<()> {
        match self.kind {
            ExperimentKind::Sim1d | ExperimentKind::Real => {
                let s = &self.sizes;
                let a1 = if s.n_calib.is_some() { s.n_train } else { s.n_train.div_ceil(2) };
                if a1 == 0 || s.n_calib == Some(0) || (s.n_calib.is_none() && s.n_train < 2) {
                    return Err(config_err("sizes", "training and calibration folds must be non-empty"));
                }
                if s.n_test == 0 {
                    return Err(config_err("sizes.n_test", "must be at least 1"));
                }
            }
            ExperimentKind::Sim2d => {
                let s = &self.sim2d;
                if s.n0 < 2 || s.n0_test == Some(0) {
                    return Err(config_err("sim2d.n0", "need at least 2 training and 1 test minority rows"));
                }
                let (ix, iy) = s.inner;
                let (ox, oy) = s.outer;
                if !(ix > 0.0 && iy > 0.0 && ix < ox && iy < oy) {
                    return Err(config_err("sim2d", "inner ellipse must lie strictly inside the outer one"));
                }
            }
        }
        match self.kind {
            ExperimentKind::Sim1d => {
                if self.sim1d.mu.is_empty() {
                    return Err(config_err("sim1d.mu", "at least one value is required"));
                }
                if let Some(i) = self.sim1d.mu.iter().position(|m| !m.is_finite()) {
                    return Err(config_err(format!("sim1d.mu[{i}]"), "must be finite"));
                }
            }
            ExperimentKind::Real => {
                if self.real.is_none() {
                    return Err(config_err("real.path", "real experiments require a data path"));
                }
            }
            ExperimentKind::Sim2d => {}
        }
        Ok(())
    }

    fn uses_variant(&self, v: Variant) -> bool {
        self.methods.iter().any(|m| m.variants().is_some_and(|vs| vs.contains(&v)))
    }

    /// Variants that will run for `m`.
    pub fn variants_for(&self, m: &MethodSpec) -> Vec<Variant> {
        match m.variants() {
            Some(vs) => vs.to_vec(),
            None => m
                .supported_variants()
                .iter()
                .copied()
                .filter(|v| *v != Variant::Smote || self.smote.enabled)
                .collect(),
        }
    }

    /// Copy with every variant list spelled out.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        for m in out.methods.iter_mut() {
            let vs = self.variants_for(m);
            *m.variants_mut() = Some(vs);
        }
        out
    }
}
