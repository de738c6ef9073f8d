use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::scoring::PredictionRecord;
use crate::splits::{AttributeDomain, GroupTag};

/// Dense matrix with row and column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Samples behind each column (confidence matrix) or row
    /// (explainability matrix).
    pub counts: Vec<f64>,
}

impl LabeledMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row][col]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![String::new()];
        header.extend(self.column_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        w.flush().at(path)?;
        Ok(())
    }
}

/// Column labels `Known, OOD_1, ..., OOD_M`.
pub fn group_columns(m: usize) -> Vec<String> {
    std::iter::once("Known".to_string())
        .chain((1..=m).map(|a| format!("OOD_{a}")))
        .collect()
}

/// Index of a sample's true group in `Known, OOD_1..OOD_M, OOD_all`, or
/// `None` when an unseen known combination is filtered out.
fn group_index(group: GroupTag, m: usize, include_unseen_combos: bool) -> Option<usize> {
    match group {
        GroupTag::KnownSeen => Some(0),
        GroupTag::KnownUnseenCombo => include_unseen_combos.then_some(0),
        GroupTag::OodAttr(a) => Some(1 + a),
        GroupTag::OodAll => Some(m + 1),
    }
}

/// Mean confidence of head `i` over samples of each column type
/// (`Known, OOD_1..OOD_M`). Samples unknown in several attributes are not
/// part of any column.
pub fn confidence_matrix(
    records: &[PredictionRecord],
    domains: &[AttributeDomain],
    include_unseen_combos: bool,
) -> Result<LabeledMatrix> {
    let m = domains.len();
    let mut sums = vec![vec![0.0; m + 1]; m];
    let mut counts = vec![0usize; m + 1];
    for r in records {
        check_width(r, m)?;
        let Some(col) = group_index(r.group, m, include_unseen_combos).filter(|&c| c <= m) else {
            continue;
        };
        counts[col] += 1;
        for (head, a) in r.attributes.iter().enumerate() {
            sums[head][col] += a.confidence;
        }
    }
    let columns = group_columns(m);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Metric(format!("no samples for confidence-matrix column {}", columns[empty])));
    }
    Ok(LabeledMatrix {
        row_labels: domains.iter().map(|d| d.name.clone()).collect(),
        column_labels: columns,
        values: sums
            .iter()
            .map(|row| row.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
            .collect(),
        counts: counts.iter().map(|&c| c as f64).collect(),
    })
}

fn check_width(r: &PredictionRecord, m: usize) -> Result<()> {
    if r.attributes.len() != m {
        return Err(Error::Metric(format!(
            "record {} has {} attributes, expected {m}",
            r.sample_id,
            r.attributes.len()
        )));
    }
    Ok(())
}

/// Group labels `Known, OOD_1..OOD_M, OOD_all`.
pub fn explainability_labels(m: usize) -> Vec<String> {
    let mut labels = group_columns(m);
    labels.push("OOD_all".into());
    labels
}

/// Row-normalized (to 100) counts of true group versus the group implied by
/// the per-attribute decisions `confidence < threshold`.
pub fn explainability_matrix(
    records: &[PredictionRecord],
    m: usize,
    thresholds: &[f64],
    include_unseen_combos: bool,
) -> Result<LabeledMatrix> {
    if thresholds.len() != m {
        return Err(Error::Metric(format!("{} thresholds for {m} attributes", thresholds.len())));
    }
    let size = m + 2;
    let mut counts = vec![vec![0usize; size]; size];
    for r in records {
        check_width(r, m)?;
        let Some(row) = group_index(r.group, m, include_unseen_combos) else {
            continue;
        };
        let flagged: Vec<usize> = r
            .attributes
            .iter()
            .zip(thresholds)
            .enumerate()
            .filter(|(_, (a, &t))| a.confidence < t)
            .map(|(i, _)| i)
            .collect();
        let col = match flagged.as_slice() {
            [] => 0,
            [a] => 1 + a,
            _ => m + 1,
        };
        counts[row][col] += 1;
    }
    let labels = explainability_labels(m);
    let totals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    if let Some(empty) = totals.iter().position(|&t| t == 0) {
        return Err(Error::Metric(format!("no samples in explainability row {}", labels[empty])));
    }
    Ok(LabeledMatrix {
        row_labels: labels.clone(),
        column_labels: labels,
        values: counts
            .iter()
            .zip(&totals)
            .map(|(row, &t)| row.iter().map(|&c| 100.0 * c as f64 / t as f64).collect())
            .collect(),
        counts: totals.iter().map(|&t| t as f64).collect(),
    })
}
