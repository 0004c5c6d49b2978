//! Runs an experiment config: draws the folds of every (mu, pi0, repetition)
//! unit, fits each method variant once per unit and evaluates it for every
//! `b`.
//!
//! Seeds: unit `u` uses `seed.derive_path([mu index, pi0 index, repetition])`;
//! method `m`, variant `v` fits with `unit.derive_path([100 + m, v])`. Units
//! run in parallel and are merged in unit order, so output never depends on
//! scheduling.

use std::fs;
use std::path::Path;
use std::time::Instant;

use capclass::forest::{fit_classical_forest, fit_forest};
use capclass::ingest::{draw_train_test, load_csv, FoldManifest};
use capclass::kde::{fit_bayes_plugin, fit_kde_with};
use capclass::knn::{default_a0_grid, default_k_grid, GaussianKnnModel, GridVotes, WeightedKnnModel};
use capclass::smote::smote_augment;
use capclass::svm::{fit_classical_svm, fit_svm};
use capclass::synth::{gen_1d, gen_ellipses, EllipseSpec, OneDimSpec};
use capclass::{
    calibrate, evaluate, split, split_indices, threshold_labels, CapacitySpec, FeatureMatrix,
    LabeledDataset, MinorityScorer, RngSeed, SplitPlan, MINORITY,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, MethodSpec, Variant};
use crate::error::{CliError, CliResult};
use crate::results::{write_rows, ResultRow};
use crate::summary::{summarize, Summary};

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// The config with defaults filled in.
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub manifests: Vec<(String, FoldManifest)>,
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    mu: Option<(usize, f64)>,
    pi0_idx: usize,
    pi0: f64,
    rep: usize,
}

impl Unit {
    fn seed(&self, base: RngSeed) -> RngSeed {
        let mu_idx = self.mu.map_or(0, |m| m.0) as u64;
        base.derive_path(&[mu_idx, self.pi0_idx as u64, self.rep as u64])
    }
}

struct Folds {
    a1: LabeledDataset,
    a2: LabeledDataset,
    test: LabeledDataset,
    manifest: Option<FoldManifest>,
}

/// Z-scores all folds with the pooled A1 and A2 moments; constant features
/// are only centred.
fn standardize(f: &mut Folds) -> capclass::Result<()> {
    let d = f.a1.dim();
    let n = (f.a1.len() + f.a2.len()) as f64;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for x in f.a1.features().iter_rows().chain(f.a2.features().iter_rows()) {
        for j in 0..d {
            mean[j] += x[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for x in f.a1.features().iter_rows().chain(f.a2.features().iter_rows()) {
        for j in 0..d {
            sq[j] += (x[j] - mean[j]).powi(2);
        }
    }
    let scale: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    let apply = |data: &LabeledDataset| {
        let values = data
            .features()
            .as_slice()
            .chunks_exact(d)
            .flat_map(|x| (0..d).map(|j| (x[j] - mean[j]) / scale[j]).collect::<Vec<_>>())
            .collect();
        LabeledDataset::new(FeatureMatrix::new(values, data.len(), d)?, data.labels().to_vec())
    };
    f.a1 = apply(&f.a1)?;
    f.a2 = apply(&f.a2)?;
    f.test = apply(&f.test)?;
    Ok(())
}

/// One `b` worth of test predictions.
struct Decision {
    preds: Vec<u8>,
    tau: Option<f64>,
    /// `(selected, n, max_selected)` on the calibration fold.
    calib: Option<(usize, usize, usize)>,
}

fn core(context: &str) -> impl Fn(capclass::Error) -> CliError + '_ {
    move |e| CliError::from_core(context, e)
}

pub fn run(config: &ExperimentConfig) -> CliResult<RunOutput> {
    config.validate()?;
    let config = config.resolved();
    let source = match (&config.kind, &config.real) {
        (ExperimentKind::Real, Some(r)) => Some(load_csv(&r.path, &r.schema).map_err(|e| {
            CliError::Data(format!("{}: {e}", r.path.display()))
        })?),
        _ => None,
    };

    let mus: Vec<Option<(usize, f64)>> = match config.kind {
        ExperimentKind::Sim1d => config.sim1d.mu.iter().copied().enumerate().map(Some).collect(),
        _ => vec![None],
    };
    let mut units = Vec::new();
    for &mu in &mus {
        for (pi0_idx, &pi0) in config.pi0.iter().enumerate() {
            for rep in 0..config.repetitions {
                units.push(Unit { mu, pi0_idx, pi0, rep });
            }
        }
    }

    let per_unit: Vec<(Vec<ResultRow>, Option<(String, FoldManifest)>)> = units
        .par_iter()
        .map(|u| run_unit(&config, source.as_ref(), u))
        .collect::<CliResult<_>>()?;

    let mut rows = Vec::new();
    let mut manifests = Vec::new();
    for (r, m) in per_unit {
        rows.extend(r);
        manifests.extend(m);
    }
    let summary = summarize(&rows);
    Ok(RunOutput {
        config,
        rows,
        summary,
        manifests,
    })
}

/// Writes `results.csv`, `summary.json`, `config.json` and any fold manifests.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let results = dir.join("results.csv");
    let f = fs::File::create(&results).map_err(|e| CliError::io(&results, e))?;
    write_rows(&out.rows, std::io::BufWriter::new(f))?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_json(&dir.join("config.json"), &out.config)?;
    if !out.manifests.is_empty() {
        let mdir = dir.join("manifests");
        fs::create_dir_all(&mdir).map_err(|e| CliError::io(&mdir, e))?;
        for (name, m) in &out.manifests {
            write_json(&mdir.join(name), m)?;
        }
    }
    Ok(())
}

pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> CliResult<RunOutput> {
    let out = run(config)?;
    write_outputs(&out, dir)?;
    Ok(out)
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn make_folds(cfg: &ExperimentConfig, source: Option<&LabeledDataset>, u: &Unit, seed: RngSeed) -> CliResult<Folds> {
    let s = cfg.sizes;
    match cfg.kind {
        ExperimentKind::Sim1d => {
            let spec = OneDimSpec::new(u.mu.expect("sim1d unit has mu").1, u.pi0).map_err(core("sim1d"))?;
            let (a1, a2) = match s.n_calib {
                Some(nc) => (
                    gen_1d(&spec, s.n_train, seed.derive(0)).map_err(core("sim1d"))?,
                    gen_1d(&spec, nc, seed.derive(1)).map_err(core("sim1d"))?,
                ),
                None => {
                    let all = gen_1d(&spec, s.n_train, seed.derive(0)).map_err(core("sim1d"))?;
                    let (a1, a2, _) = split(&all, SplitPlan::halves(all.len()), seed.derive(2)).map_err(core("split"))?;
                    (a1, a2)
                }
            };
            let test = gen_1d(&spec, s.n_test, seed.derive(3)).map_err(core("sim1d"))?;
            Ok(Folds { a1, a2, test, manifest: None })
        }
        ExperimentKind::Sim2d => {
            let o = cfg.sim2d;
            let spec = |n0| EllipseSpec {
                inner: o.inner,
                outer: o.outer,
                n0,
                pi0: u.pi0,
            };
            let train = gen_ellipses(&spec(o.n0), seed.derive(0)).map_err(core("sim2d"))?;
            let (a1, a2, _) = split(&train, SplitPlan::halves(train.len()), seed.derive(2)).map_err(core("split"))?;
            let test = gen_ellipses(&spec(o.n0_test.unwrap_or(o.n0)), seed.derive(3)).map_err(core("sim2d"))?;
            Ok(Folds { a1, a2, test, manifest: None })
        }
        ExperimentKind::Real => {
            let src = source.expect("real source loaded");
            let n_total = s.n_train + s.n_calib.unwrap_or(0);
            let draw = draw_train_test(src, u.pi0, n_total, s.n_test, seed.derive(0)).map_err(core("real data draw"))?;
            let plan = match s.n_calib {
                Some(nc) => SplitPlan::new(s.n_train, nc, 0),
                None => SplitPlan::halves(n_total),
            };
            let [i1, i2, _] = split_indices(n_total, plan, seed.derive(2)).map_err(core("split"))?;
            let to_src = |idx: &[usize]| idx.iter().map(|&i| draw.train[i]).collect::<Vec<_>>();
            let (a1_src, a2_src) = (to_src(&i1), to_src(&i2));
            let manifest = cfg.real.as_ref().filter(|r| r.write_manifests).map(|_| FoldManifest {
                pi0: u.pi0,
                repetition: u.rep,
                seed: seed.0,
                source_rows: src.len(),
                a1: a1_src.clone(),
                a2: a2_src.clone(),
                test: draw.test.clone(),
            });
            Ok(Folds {
                a1: src.select(&a1_src),
                a2: src.select(&a2_src),
                test: src.select(&draw.test),
                manifest,
            })
        }
    }
}

fn run_unit(
    cfg: &ExperimentConfig,
    source: Option<&LabeledDataset>,
    u: &Unit,
) -> CliResult<(Vec<ResultRow>, Option<(String, FoldManifest)>)> {
    let seed = u.seed(RngSeed(cfg.seed));
    let mut folds = make_folds(cfg, source, u, seed)?;
    if cfg.standardize {
        standardize(&mut folds).map_err(core("standardize"))?;
    }
    let caps: Vec<CapacitySpec> = cfg
        .b
        .iter()
        .map(|&b| CapacitySpec::new(b, u.pi0).map_err(core("capacity")))
        .collect::<CliResult<_>>()?;
    let metric_caps: Vec<CapacitySpec> = match cfg.metric_b {
        Some(mb) => vec![CapacitySpec::new(mb, u.pi0).map_err(core("metric_b"))?; caps.len()],
        None => caps.clone(),
    };

    let mut rows = Vec::new();
    for (mi, method) in cfg.methods.iter().enumerate() {
        for variant in cfg.variants_for(method) {
            let mseed = seed.derive_path(&[100 + mi as u64, variant.code()]);
            let start = Instant::now();
            let context = format!("{} {variant} (pi0 = {}, repetition {})", method.name(), u.pi0, u.rep);
            let decisions = fit_variant(cfg, method, variant, &folds, u.pi0, &caps, mseed)
                .map_err(|e| CliError::from_core(&context, e))?;
            let wall = cfg.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3);
            for ((d, cap), mcap) in decisions.into_iter().zip(&caps).zip(&metric_caps) {
                if let Some((sel, _, max_sel)) = d.calib {
                    if sel > max_sel {
                        return Err(CliError::Numerical(format!(
                            "{context}: calibration fold flags {sel} rows, capacity allows {max_sel}"
                        )));
                    }
                }
                let rep = evaluate(&d.preds, folds.test.labels(), *mcap).map_err(core("evaluate"))?;
                rows.push(ResultRow {
                    experiment_id: cfg.experiment_id.clone(),
                    method: method.name().into(),
                    variant,
                    b: cap.b(),
                    pi0: u.pi0,
                    repetition: u.rep,
                    seed: mseed.0,
                    m_hat: rep.m_hat,
                    sensitivity: rep.sensitivity,
                    specificity: rep.specificity,
                    accuracy: rep.accuracy,
                    positive_rate: rep.positive_rate,
                    tau_or_gamma: d.tau,
                    wall_time_ms: wall,
                    calib_positive_rate: d.calib.map(|(sel, n, _)| sel as f64 / n as f64),
                    n_test: folds.test.len(),
                    mu: u.mu.map(|m| m.1),
                });
            }
        }
    }
    let manifest = folds.manifest.map(|m| {
        let name = match u.mu {
            Some((mi, _)) => format!("mu{mi}_pi0_{}_rep_{}.json", u.pi0_idx, u.rep),
            None => format!("pi0_{}_rep_{}.json", u.pi0_idx, u.rep),
        };
        (name, m)
    });
    Ok((rows, manifest))
}

/// Thresholds calibrated per capacity on the calibration-fold scores.
fn calibrated(calib_scores: &[f64], test_scores: &[f64], caps: &[CapacitySpec]) -> capclass::Result<Vec<Decision>> {
    caps.iter()
        .map(|&cap| {
            let c = calibrate(calib_scores, cap)?;
            Ok(Decision {
                preds: threshold_labels(test_scores, c.tau),
                tau: Some(c.tau),
                calib: Some((c.selected, c.n, c.max_selected)),
            })
        })
        .collect()
}

fn scored<S: MinorityScorer>(model: &S, f: &Folds, caps: &[CapacitySpec]) -> capclass::Result<Vec<Decision>> {
    let sc = model.score_all(f.a2.features())?;
    let st = model.score_all(f.test.features())?;
    calibrated(&sc, &st, caps)
}

/// The same labels for every `b`.
fn fixed(preds: Vec<u8>, tau: f64, n: usize) -> Vec<Decision> {
    (0..n)
        .map(|_| Decision {
            preds: preds.clone(),
            tau: Some(tau),
            calib: None,
        })
        .collect()
}

fn odd_sqrt(n: usize) -> usize {
    let k = (n as f64).sqrt().round() as usize;
    (if k.is_multiple_of(2) { k + 1 } else { k }).clamp(1, n)
}

fn fit_variant(
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    variant: Variant,
    f: &Folds,
    pi0: f64,
    caps: &[CapacitySpec],
    seed: RngSeed,
) -> capclass::Result<Vec<Decision>> {
    let both = || f.a1.concat(&f.a2);
    let smoted = || smote_augment(&both()?, &cfg.smote.config_for(pi0)?, seed.derive(1));
    let test: &FeatureMatrix = f.test.features();
    let nb = caps.len();
    match (method, variant) {
        (MethodSpec::Kde { bandwidth, kernel, .. }, Variant::Capacity) => {
            scored(&fit_kde_with(&f.a1, *bandwidth, *kernel)?, f, caps)
        }
        (MethodSpec::Kde { bandwidth, kernel, .. }, _) => {
            let bayes = fit_bayes_plugin(&both()?, pi0, *bandwidth, *kernel)?;
            Ok(fixed(bayes.predict(test)?, bayes.tau(), nb))
        }
        (MethodSpec::Knn { k_grid, a0_grid, .. }, Variant::Capacity) => {
            let kg = k_grid.clone().unwrap_or_else(|| default_k_grid(f.a1.len()));
            let ag = a0_grid.clone().unwrap_or_else(default_a0_grid);
            let on_calib = GridVotes::new(&f.a1, &f.a2, &kg)?;
            let on_test = GridVotes::new(&f.a1, &f.test, &kg)?;
            caps.iter()
                .map(|&cap| {
                    let (k, a0) = on_calib.select(cap, &ag)?;
                    let sel = on_calib.predictions(k, a0)?.iter().filter(|&&p| p == MINORITY).count();
                    Ok(Decision {
                        preds: on_test.predictions(k, a0)?,
                        tau: Some(a0),
                        calib: Some((sel, f.a2.len(), cap.max_selected(f.a2.len()))),
                    })
                })
                .collect()
        }
        (MethodSpec::Knn { k_grid, .. }, v) => {
            let kg = k_grid.clone().unwrap_or_else(|| default_k_grid(f.a1.len()));
            let k = GridVotes::new(&f.a1, &f.a2, &kg)?.best_majority_vote_k();
            let train = if v == Variant::Smote { smoted()? } else { both()? };
            Ok(fixed(WeightedKnnModel::new(train, k, 0.5)?.predict(test)?, 0.5, nb))
        }
        (MethodSpec::KnnPosthoc { k, .. }, _) => {
            let k = k.unwrap_or_else(|| odd_sqrt(f.a1.len()));
            scored(&GaussianKnnModel::new(f.a1.clone(), k)?, f, caps)
        }
        (MethodSpec::Svm { params, .. }, Variant::Capacity) => scored(&fit_svm(&f.a1, params)?, f, caps),
        (MethodSpec::Svm { params, .. }, v) => {
            let train = if v == Variant::Smote { smoted()? } else { both()? };
            let clf = fit_classical_svm(&train, params)?;
            Ok(fixed(clf.predict(test)?, clf.tau(), nb))
        }
        (MethodSpec::Forest { params, .. }, Variant::Capacity) => scored(&fit_forest(&f.a1, params, seed)?, f, caps),
        (MethodSpec::Forest { params, .. }, v) => {
            let train = if v == Variant::Smote { smoted()? } else { both()? };
            let clf = fit_classical_forest(&train, params, seed)?;
            Ok(fixed(clf.predict(test)?, clf.tau(), nb))
        }
    }
}
