//! File formats: data and pseudopoint CSVs, JSON artifacts and the plain
//! CSV tables written for plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fdisc_core::dataset::DataMatrix;
use fdisc_core::linalg::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Cell spellings read as unobserved.
const MISSING: [&str; 4] = ["", "NA", "na", "NaN"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format { path: path.to_path_buf(), message: message.into() }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// Writes through a temporary sibling so readers never see half a file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| CliError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_path_buf(), source })
}

fn parse_cell(path: &Path, row: usize, col: &str, cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if MISSING.contains(&cell) {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format_err(path, format!("row {row}, column '{col}': cannot read '{cell}' as a number"))),
    }
}

/// Reads a data CSV: the first column holds point ids, the rest one feature
/// each. Empty, `NA` and `NaN` cells are unobserved.
pub fn read_data_csv(path: &Path) -> Result<DataMatrix> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(format_err(path, "expected an id column followed by at least one feature column"));
    }
    let features = header[1..].to_vec();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = r + 2;
        ids.push(rec[0].to_string());
        let values = features.iter().enumerate().map(|(k, name)| parse_cell(path, row, name, &rec[k + 1])).collect::<Result<Vec<_>>>()?;
        cells.push(values);
    }
    Ok(DataMatrix::new(ids, features, cells)?)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_data_csv(path: &Path, d: &DataMatrix) -> Result<()> {
    let mut header = vec![String::from("id")];
    header.extend(d.feature_names.iter().cloned());
    let rows = (0..d.n_points()).map(|i| {
        let mut row = vec![d.point_ids[i].clone()];
        row.extend((0..d.n_features()).map(|k| d.get(i, k).map(fmt).unwrap_or_else(|| String::from("NA"))));
        row
    });
    write_table(path, &header, rows)
}

/// Writes a header and string rows as CSV.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, e.to_string()))?;
    write_bytes(path, &bytes)
}

/// One row per point: its id, then the matrix row.
pub fn write_matrix_csv(path: &Path, ids: &[String], columns: &[String], m: &Matrix) -> Result<()> {
    let mut header = vec![String::from("id")];
    header.extend(columns.iter().cloned());
    let rows = (0..m.rows()).map(|i| {
        let mut row = vec![ids[i].clone()];
        row.extend(m.row(i).iter().map(|v| fmt(*v)));
        row
    });
    write_table(path, &header, rows)
}

/// Column names `prefix1 .. prefixd`.
pub fn numbered(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

/// Feature group assignment and per-group weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsFile {
    #[serde(default)]
    pub groups: BTreeMap<String, String>,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

/// Ground truth written by `synth`, keyed by point id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub point_ids: Vec<String>,
    pub truth: Vec<f64>,
    pub noisy_truth: Vec<f64>,
    pub clusters: Vec<usize>,
}

impl TruthFile {
    /// Truth values in the order of `ids`; every id must be present.
    pub fn aligned(&self, ids: &[String], path: &Path) -> Result<Vec<f64>> {
        let by_id: BTreeMap<&str, f64> = self.point_ids.iter().map(String::as_str).zip(self.truth.iter().copied()).collect();
        ids.iter()
            .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| format_err(path, format!("no truth value for point '{id}'"))))
            .collect()
    }
}

pub const PSEUDOPOINT_ID: &str = "folder_id";
pub const PSEUDOPOINT_COUNT: &str = "member_count";
pub const PSEUDOPOINT_SCORE: &str = "score";

/// Writes one row per pseudopoint: folder id, member count, the centroid on
/// the raw feature scale and the score (empty when unlabeled).
pub fn write_pseudopoints_csv(path: &Path, features: &[String], folders: &[usize], counts: &[usize], centroids: &[Vec<f64>], scores: Option<&[f64]>) -> Result<()> {
    let mut header = vec![String::from(PSEUDOPOINT_ID), String::from(PSEUDOPOINT_COUNT)];
    header.extend(features.iter().cloned());
    header.push(String::from(PSEUDOPOINT_SCORE));
    let rows = (0..folders.len()).map(|r| {
        let mut row = vec![folders[r].to_string(), counts[r].to_string()];
        row.extend(centroids[r].iter().map(|v| fmt(*v)));
        row.push(scores.map(|s| fmt(s[r])).unwrap_or_default());
        row
    });
    write_table(path, &header, rows)
}

/// Reads `(folder, score)` pairs from an edited pseudopoint CSV. Feature
/// columns are ignored; an empty score is `None`.
pub fn read_pseudopoint_scores(path: &Path) -> Result<Vec<(usize, Option<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name).ok_or_else(|| format_err(path, format!("missing column '{name}'")));
    let (id_col, score_col) = (col(PSEUDOPOINT_ID)?, col(PSEUDOPOINT_SCORE)?);
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = r + 2;
        let id = rec[id_col].trim();
        let folder = id.parse::<usize>().map_err(|_| format_err(path, format!("row {row}: bad folder id '{id}'")))?;
        out.push((folder, parse_cell(path, row, PSEUDOPOINT_SCORE, &rec[score_col])?));
    }
    Ok(out)
}
