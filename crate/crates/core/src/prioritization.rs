//! AHP cost-value prioritization.
//!
//! Priorities come from the approximate method: divide every entry by its
//! column sum, then average each row of the normalized matrix.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for `a[j][i] * a[i][j] == 1`.
pub const RECIPROCITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AhpError {
    #[error("matrix is not square: {rows} rows, {cols} columns in row {row}")]
    NotSquare { rows: usize, cols: usize, row: usize },
    #[error("entry ({i}, {j}) = {value} is not positive")]
    NonPositiveEntry { i: usize, j: usize, value: f64 },
    #[error("entries ({i}, {j}) = {a} and ({j}, {i}) = {b} are not reciprocal")]
    NotReciprocal { i: usize, j: usize, a: f64, b: f64 },
    #[error("label sets differ: {0}")]
    LabelMismatch(String),
    #[error("cannot parse matrix: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityVector {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

impl PriorityVector {
    pub fn weight(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.weights[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostValuePoint {
    pub label: String,
    pub cost: f64,
    pub value: f64,
}

impl ComparisonMatrix {
    pub fn new(labels: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, AhpError> {
        let m = ComparisonMatrix { labels, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks shape, positivity, unit diagonal and reciprocity.
    pub fn validate(&self) -> Result<(), AhpError> {
        let n = self.entries.len();
        if self.labels.len() != n {
            return Err(AhpError::NotSquare { rows: n, cols: self.labels.len(), row: 0 });
        }
        for (row, r) in self.entries.iter().enumerate() {
            if r.len() != n {
                return Err(AhpError::NotSquare { rows: n, cols: r.len(), row });
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.entries[i][j];
                if !(v > 0.0 && v.is_finite()) {
                    return Err(AhpError::NonPositiveEntry { i, j, value: v });
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let (a, b) = (self.entries[i][j], self.entries[j][i]);
                if (a * b - 1.0).abs() > RECIPROCITY_TOLERANCE {
                    return Err(AhpError::NotReciprocal { i, j, a, b });
                }
            }
        }
        Ok(())
    }

    /// Reads a CSV matrix whose first row and first column hold labels.
    /// Entries may be decimals or fractions such as `1/7` or `1 / 7`.
    pub fn from_csv<R: Read>(source: R) -> Result<Self, AhpError> {
        let mut r =
            csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(source);
        let mut rows = r.records();
        let header = rows
            .next()
            .ok_or_else(|| AhpError::Parse("empty file".into()))?
            .map_err(|e| AhpError::Parse(e.to_string()))?;
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut entries = Vec::new();
        for (k, row) in rows.enumerate() {
            let row = row.map_err(|e| AhpError::Parse(e.to_string()))?;
            if row.iter().all(str::is_empty) {
                continue;
            }
            let label = row.get(0).unwrap_or_default();
            if labels.get(k).map(String::as_str) != Some(label) {
                return Err(AhpError::LabelMismatch(format!(
                    "row {} is labelled {label:?}, column header says {:?}",
                    k + 1,
                    labels.get(k)
                )));
            }
            entries.push(row.iter().skip(1).map(parse_entry).collect::<Result<Vec<f64>, _>>()?);
        }
        let m = ComparisonMatrix { labels, entries };
        m.validate()?;
        Ok(m)
    }
}

fn parse_entry(s: &str) -> Result<f64, AhpError> {
    let bad = || AhpError::Parse(format!("bad matrix entry {s:?}"));
    match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            Ok(num / den)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

/// Divides each entry by its column sum.
pub fn normalize(matrix: &ComparisonMatrix) -> Result<Vec<Vec<f64>>, AhpError> {
    matrix.validate()?;
    let n = matrix.len();
    let col_sums: Vec<f64> = (0..n).map(|j| matrix.entries.iter().map(|r| r[j]).sum()).collect();
    Ok(matrix.entries.iter().map(|r| r.iter().zip(&col_sums).map(|(v, s)| v / s).collect()).collect())
}

/// Row means of the normalized matrix.
pub fn priority_vector(matrix: &ComparisonMatrix) -> Result<PriorityVector, AhpError> {
    let norm = normalize(matrix)?;
    let n = norm.len() as f64;
    Ok(PriorityVector {
        labels: matrix.labels.clone(),
        weights: norm.iter().map(|r| r.iter().sum::<f64>() / n).collect(),
    })
}

/// Pairs each requirement's value weight with its cost weight.
pub fn cost_value_points(value: &PriorityVector, cost: &PriorityVector) -> Result<Vec<CostValuePoint>, AhpError> {
    let mut a = value.labels.clone();
    let mut b = cost.labels.clone();
    a.sort();
    b.sort();
    if a != b || value.labels.len() != value.weights.len() || cost.labels.len() != cost.weights.len() {
        return Err(AhpError::LabelMismatch(format!("value {:?} vs cost {:?}", value.labels, cost.labels)));
    }
    Ok(value
        .labels
        .iter()
        .zip(&value.weights)
        .map(|(label, &v)| CostValuePoint {
            label: label.clone(),
            cost: cost.weight(label).expect("label sets match"),
            value: v,
        })
        .collect())
}

/// Writes `label,cost,value` rows with the given number of decimals.
pub fn write_points_csv<W: Write>(points: &[CostValuePoint], decimals: usize, sink: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(["label", "cost", "value"]).map_err(to_io)?;
    for p in points {
        w.write_record([p.label.clone(), format!("{:.*}", decimals, p.cost), format!("{:.*}", decimals, p.value)])
            .map_err(to_io)?;
    }
    w.flush()
}
