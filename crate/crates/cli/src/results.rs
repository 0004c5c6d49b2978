//! Result rows and their CSV form.
//!
//! Columns follow the field order of [`ResultRow`]. Undefined values are
//! written as `NA`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::error::{CliError, CliResult};

pub const NA: &str = "NA";

mod na {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str(super::NA),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let s = String::deserialize(d)?;
        if s == super::NA || s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

/// One evaluated (method, variant, b, pi0, repetition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub method: String,
    pub variant: Variant,
    pub b: f64,
    pub pi0: f64,
    pub repetition: usize,
    /// Seed of the fitted model; shared by the rows of one fit across `b`.
    pub seed: u64,
    #[serde(with = "na")]
    pub m_hat: Option<f64>,
    #[serde(with = "na")]
    pub sensitivity: Option<f64>,
    #[serde(with = "na")]
    pub specificity: Option<f64>,
    pub accuracy: f64,
    /// Test-fold rate of minority predictions.
    pub positive_rate: f64,
    /// Score threshold; `a0` for the weighted k-NN vote.
    #[serde(with = "na")]
    pub tau_or_gamma: Option<f64>,
    #[serde(with = "na")]
    pub wall_time_ms: Option<f64>,
    /// Calibration-fold rate of minority predictions (calibrated variants).
    #[serde(with = "na")]
    pub calib_positive_rate: Option<f64>,
    pub n_test: usize,
    /// Cauchy shift of 1D simulations.
    #[serde(with = "na")]
    pub mu: Option<f64>,
}

impl ResultRow {
    pub fn budget(&self) -> f64 {
        self.b * self.pi0
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(column_names())
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn read_rows<R: Read>(reader: R) -> CliResult<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Data(format!("results header: {e}")))?.clone();
    if !header.is_empty() && header.iter().ne(column_names()) {
        return Err(CliError::Data(format!(
            "results header does not match the expected columns: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Data(format!("results line {}: {e}", i + 2))))
        .collect()
}

pub fn column_names() -> [&'static str; 17] {
    [
        "experiment_id",
        "method",
        "variant",
        "b",
        "pi0",
        "repetition",
        "seed",
        "m_hat",
        "sensitivity",
        "specificity",
        "accuracy",
        "positive_rate",
        "tau_or_gamma",
        "wall_time_ms",
        "calib_positive_rate",
        "n_test",
        "mu",
    ]
}
