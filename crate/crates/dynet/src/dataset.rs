//! Multivariate time series container and its CSV format.
//!
//! A dataset holds `L` node signals of equal length `N`, one row per node.
//! On disk it is a CSV with one header row of node labels and one data row
//! per time point; floats are written in shortest round-trip form so that
//! read/write round-trips exactly.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `L` node signals over `N` time points, with unique node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    node_labels: Vec<String>,
    /// L x N, row j is node j.
    data: DMatrix<f64>,
}

impl TimeSeriesDataset {
    /// Builds a dataset, validating shape, label uniqueness and finiteness.
    pub fn new(node_labels: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        let l = data.nrows();
        let n = data.ncols();
        if l < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 nodes, got {l}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        if node_labels.len() != l {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} rows",
                node_labels.len(),
                l
            )));
        }
        let mut seen = HashSet::new();
        for label in &node_labels {
            if !seen.insert(label) {
                return Err(Error::InvalidDataset(format!("duplicate label {label:?}")));
            }
        }
        for j in 0..l {
            for t in 0..n {
                if !data[(j, t)].is_finite() {
                    return Err(Error::InvalidDataset(format!(
                        "non-finite value at node {j}, sample {t}"
                    )));
                }
            }
        }
        Ok(Self { node_labels, data })
    }

    /// Builds from per-node rows with default labels `w1..wL`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let l = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDataset("ragged rows".into()));
        }
        let labels = (1..=l).map(|j| format!("w{j}")).collect();
        let data = DMatrix::from_fn(l, n, |j, t| rows[j][t]);
        Self::new(labels, data)
    }

    pub fn node_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.data.ncols()
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Signal of node `j` as a vector over time.
    pub fn node_signal(&self, j: usize) -> DVector<f64> {
        self.data.row(j).transpose()
    }

    /// Returns a copy with every node scaled to unit sample variance.
    /// Constant nodes are left untouched.
    pub fn standardized(&self) -> Self {
        let n = self.sample_count() as f64;
        let mut data = self.data.clone();
        for mut row in data.row_iter_mut() {
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            if var > 0.0 {
                row /= var.sqrt();
            }
        }
        Self {
            node_labels: self.node_labels.clone(),
            data,
        }
    }

    /// Reads the CSV format: header of node labels, then one row per time point.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let labels: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let l = labels.len();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); l];
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != l {
                return Err(Error::InvalidDataset(format!(
                    "row {}: expected {} columns, got {}",
                    row_idx + 2,
                    l,
                    record.len()
                )));
            }
            for (col, field) in record.iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidDataset(format!(
                        "row {}, column {} ({}): cannot parse {field:?} as a number",
                        row_idx + 2,
                        col + 1,
                        labels[col]
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::InvalidDataset(format!(
                        "row {}, column {} ({}): non-finite value",
                        row_idx + 2,
                        col + 1,
                        labels[col]
                    )));
                }
                columns[col].push(value);
            }
        }
        let n = columns.first().map_or(0, Vec::len);
        let data = DMatrix::from_fn(l, n, |j, t| columns[j][t]);
        Self::new(labels, data)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.node_labels)?;
        for t in 0..self.sample_count() {
            let row: Vec<String> = (0..self.node_count())
                .map(|j| format!("{}", self.data[(j, t)]))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}
