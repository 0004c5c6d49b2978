//! Loading labelled CSV files and drawing fixed-prevalence samples from them.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{class_counts, FeatureMatrix, LabeledDataset, RngSeed, MAJORITY, MINORITY};
use crate::error::{Error, Result};

/// A column given by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureColumns {
    /// Every column other than the label and the listed ones.
    AllExcept(Vec<ColumnRef>),
    Only(Vec<ColumnRef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub label: ColumnRef,
    pub features: FeatureColumns,
    /// Raw label value of the minority class.
    pub minority_value: String,
    /// Raw label value of the majority class.
    pub majority_value: String,
    pub has_header: bool,
    /// Lines skipped before the header (some exports carry an extra title row).
    pub skip_lines: usize,
}

impl Default for CsvSchema {
    /// Credit-card default benchmark: defaulters (`1`) are the minority.
    fn default() -> Self {
        Self {
            label: ColumnRef::Name("default payment next month".into()),
            features: FeatureColumns::AllExcept(vec![ColumnRef::Name("ID".into())]),
            minority_value: "1".into(),
            majority_value: "0".into(),
            has_header: true,
            skip_lines: 0,
        }
    }
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>, width: usize) -> Result<usize> {
    match col {
        ColumnRef::Index(i) if *i < width => Ok(*i),
        ColumnRef::Index(i) => Err(Error::InvalidDataset(format!("column index {i} out of range (width {width})"))),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim() == name))
            .ok_or_else(|| Error::InvalidDataset(format!("column {name:?} not found in header"))),
    }
}

/// Reads a labelled dataset from any reader.
pub fn load_csv_reader<R: Read>(mut reader: R, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let body: String = text
        .split_inclusive('\n')
        .skip(schema.skip_lines)
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = if schema.has_header { Some(rdr.headers()?.clone()) } else { None };
    let mut records = rdr.records().peekable();
    let width = match (&header, records.peek()) {
        (Some(h), _) => h.len(),
        (None, Some(Ok(r))) => r.len(),
        _ => return Err(Error::EmptyInput("csv rows")),
    };
    let label = resolve(&schema.label, header.as_ref(), width)?;
    let features: Vec<usize> = match &schema.features {
        FeatureColumns::Only(cols) => cols
            .iter()
            .map(|c| resolve(c, header.as_ref(), width))
            .collect::<Result<_>>()?,
        FeatureColumns::AllExcept(cols) => {
            let skip: HashSet<usize> = cols
                .iter()
                .map(|c| resolve(c, header.as_ref(), width))
                .collect::<Result<_>>()?;
            (0..width).filter(|j| *j != label && !skip.contains(j)).collect()
        }
    };
    if features.is_empty() {
        return Err(Error::InvalidDataset("schema selects no feature columns".into()));
    }
    let col_name = |j: usize| match &header {
        Some(h) => h.get(j).unwrap_or("").to_string(),
        None => j.to_string(),
    };
    // diagnostics report 1-based line numbers of the file
    let first_row = schema.skip_lines + schema.has_header as usize + 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let row = first_row + r;
        let raw = rec.get(label).unwrap_or("");
        labels.push(if raw == schema.minority_value {
            MINORITY
        } else if raw == schema.majority_value {
            MAJORITY
        } else {
            return Err(Error::UnknownLabel { row, value: raw.to_string() });
        });
        for &j in &features {
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col_name(j),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: col_name(j),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    let n = labels.len();
    LabeledDataset::new(FeatureMatrix::new(values, n, features.len())?, labels)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    load_csv_reader(File::open(path)?, schema)
}

/// `(minority, majority)` counts for `n_total` rows at prevalence `pi0`.
pub fn class_targets(pi0: f64, n_total: usize) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&pi0) {
        return Err(Error::InvalidParameter(format!("pi0 = {pi0} must lie in [0, 1]")));
    }
    let m0 = (pi0 * n_total as f64).round() as usize;
    Ok((m0, n_total - m0))
}

fn draw(pool: &[usize], k: usize, class: u8, seed: RngSeed) -> Result<Vec<usize>> {
    if k > pool.len() {
        return Err(Error::InsufficientClassCount {
            class,
            needed: k,
            available: pool.len(),
        });
    }
    let mut rng = seed.rng();
    Ok(sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

/// Source row indices of a draw with exactly `round(pi0 n_total)` minority
/// rows, without replacement, in shuffled order.
pub fn resample_indices(data: &LabeledDataset, pi0: f64, n_total: usize, seed: RngSeed) -> Result<Vec<usize>> {
    let (m0, m1) = class_targets(pi0, n_total)?;
    let mut idx = draw(&data.indices_of(MINORITY), m0, MINORITY, seed.derive(0))?;
    idx.extend(draw(&data.indices_of(MAJORITY), m1, MAJORITY, seed.derive(1))?);
    let perm = sample(&mut seed.derive(2).rng(), idx.len(), idx.len());
    Ok(perm.into_iter().map(|i| idx[i]).collect())
}

pub fn resample_to_pi0(data: &LabeledDataset, pi0: f64, n_total: usize, seed: RngSeed) -> Result<LabeledDataset> {
    Ok(data.select(&resample_indices(data, pi0, n_total, seed)?))
}

/// Disjoint training and test draws at a common prevalence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDraw {
    pub pi0: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub n_test_requested: usize,
}

impl RealDraw {
    pub fn test_reduced(&self) -> bool {
        self.test.len() < self.n_test_requested
    }
}

/// Draws `n_train` rows, then `n_test` more from what is left, both at
/// prevalence `pi0`. If the leftover rows cannot fill the test draw, the test
/// size is lowered to the largest feasible value.
pub fn draw_train_test(
    data: &LabeledDataset,
    pi0: f64,
    n_train: usize,
    n_test: usize,
    seed: RngSeed,
) -> Result<RealDraw> {
    let train = resample_indices(data, pi0, n_train, seed.derive(0))?;
    let used: HashSet<usize> = train.iter().copied().collect();
    let rest: Vec<usize> = (0..data.len()).filter(|i| !used.contains(i)).collect();
    let left = data.select(&rest);
    let (c0, c1) = class_counts(&left);
    let mut n = n_test;
    while n > 0 {
        let (m0, m1) = class_targets(pi0, n)?;
        if m0 <= c0 && m1 <= c1 {
            break;
        }
        n -= 1;
    }
    if n == 0 {
        return Err(Error::InsufficientClassCount {
            class: MINORITY,
            needed: 1,
            available: c0,
        });
    }
    let test = resample_indices(&left, pi0, n, seed.derive(1))?
        .into_iter()
        .map(|i| rest[i])
        .collect();
    Ok(RealDraw {
        pi0,
        train,
        test,
        n_test_requested: n_test,
    })
}

/// Source row indices of every fold of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub pi0: f64,
    pub repetition: usize,
    pub seed: u64,
    pub source_rows: usize,
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldManifest {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}
