//! File formats: CSV data in, JSON results out.
//!
//! Data files are RFC 4180 CSV with one header row of variable names and one
//! row per sample. Dense matrices are written as an object holding `p` and the
//! rows as nested arrays.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::model::{Dataset, DatasetOptions};
use crate::single::EcmFit;

/// Square matrix in row-major nested-array form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub p: usize,
    pub rows: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for DenseMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        DenseMatrix {
            p: m.nrows(),
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl DenseMatrix {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows.len() != self.p || self.rows.iter().any(|r| r.len() != self.p) {
            return Err(GhsError::Parse(format!("matrix is not {0}x{0}", self.p)));
        }
        Ok(DMatrix::from_fn(self.p, self.p, |i, j| self.rows[i][j]))
    }
}

/// Parses a header-plus-rows CSV into a [`Dataset`].
pub fn read_dataset<R: Read>(reader: R, options: DatasetOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(GhsError::Parse("missing header row".into()));
    }
    let p = names.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => GhsError::Parse(format!(
                "ragged row {}: {len} fields, expected {expected_len}",
                row + 1
            )),
            _ => GhsError::Csv(e),
        })?;
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                GhsError::Parse(format!(
                    "non-numeric cell {cell:?} in row {}, column {} ({})",
                    row + 1,
                    col + 1,
                    names[col]
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    Dataset::with_names(DMatrix::from_row_slice(n, p, &values), names, options)
}

pub fn read_dataset_file(path: &Path, options: DatasetOptions) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| GhsError::io(path, e))?;
    read_dataset(file, options).map_err(|e| match e {
        GhsError::Parse(msg) => GhsError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes `observations` under a header of `names`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_observations<W: Write>(
    writer: W,
    names: &[String],
    observations: &DMatrix<f64>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(names)?;
    for row in observations.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush().map_err(|e| GhsError::io("<csv>", e))?;
    Ok(())
}

pub fn write_observations_file(
    path: &Path,
    names: &[String],
    observations: &DMatrix<f64>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| GhsError::io(path, e))?;
    write_observations(std::io::BufWriter::new(file), names, observations)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| GhsError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GhsError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GhsError::io(path, e))
}

/// Where the global scale of a fit came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSource {
    Fixed,
    Aic,
    Updated,
}

/// Serialized single-network fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub p: usize,
    pub n: usize,
    pub names: Vec<String>,
    pub tau_sq: f64,
    pub tau_source: TauSource,
    pub iterations: usize,
    pub converged: bool,
    pub edge_threshold: f64,
    pub edges: Vec<(usize, usize)>,
    pub sparsity: f64,
    pub theta: DenseMatrix,
    pub lambda_sq: DenseMatrix,
    pub partial_correlations: DenseMatrix,
    pub objective_trace: Vec<f64>,
    pub tau_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aic_trace: Option<Vec<(f64, f64)>>,
}

impl FitReport {
    pub fn new(
        data: &Dataset,
        fit: &EcmFit,
        tau_source: TauSource,
        edge_threshold: f64,
    ) -> Result<Self> {
        let graph = fit.graph(edge_threshold)?;
        Ok(Self {
            p: data.p(),
            n: data.n(),
            names: data.names().to_vec(),
            tau_sq: fit.tau_sq.get(),
            tau_source,
            iterations: fit.iterations,
            converged: fit.converged,
            edge_threshold,
            edges: graph.adjacency.edges(),
            sparsity: graph.sparsity,
            theta: DenseMatrix::from(fit.theta.as_matrix()),
            lambda_sq: DenseMatrix::from(fit.lambda_sq.as_matrix()),
            partial_correlations: DenseMatrix::from(&graph.partial_correlations),
            objective_trace: fit.objective_trace.clone(),
            tau_trace: fit.tau_trace.clone(),
            aic_trace: None,
        })
    }
}
