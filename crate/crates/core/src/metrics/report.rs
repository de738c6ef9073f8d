use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curves::{auroc, oscr};
use super::matrices::{confidence_matrix, explainability_matrix, LabeledMatrix};
use super::thresholds::{select_threshold, Decision, ThresholdChoice};
use crate::error::{Error, IoContext, Result};
use crate::scoring::PredictionRecord;
use crate::splits::AttributeDomain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Pool known-value samples from unseen combinations into the Known
    /// populations of the matrices.
    pub include_unseen_combos: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            include_unseen_combos: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetrics {
    pub name: String,
    pub auroc: f64,
    pub oscr: f64,
    pub threshold: ThresholdChoice,
}

/// Metric values of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub auroc: Vec<f64>,
    pub oscr: Vec<f64>,
    pub average_auroc: f64,
    pub average_oscr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Identifies the configuration the scores came from, seeds excluded.
    pub fingerprint: String,
    pub scorer: String,
    pub attributes: Vec<AttributeMetrics>,
    pub average_auroc: f64,
    pub average_oscr: f64,
    pub confidence_matrix: LabeledMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explainability_matrix: Option<LabeledMatrix>,
    pub per_seed: Vec<SeedMetrics>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path).at(path)?)?)
    }

    pub fn oscr(&self, attribute: usize) -> f64 {
        self.attributes[attribute].oscr
    }
}

/// Per-attribute decisions: whether the true value is unknown and whether a
/// known value was predicted correctly.
pub fn attribute_decisions(
    records: &[PredictionRecord],
    domains: &[AttributeDomain],
    attribute: usize,
) -> Result<Vec<Decision>> {
    let d = &domains[attribute];
    records
        .iter()
        .map(|r| {
            let a = r.attributes.get(attribute).ok_or_else(|| {
                Error::Metric(format!("record {} lacks attribute {}", r.sample_id, attribute + 1))
            })?;
            let known = d.classify(&a.true_label)?;
            Ok(Decision {
                confidence: a.confidence,
                unknown: !known,
                correct: known && a.predicted_label == a.true_label,
            })
        })
        .collect()
}

pub fn select_thresholds(records: &[PredictionRecord], domains: &[AttributeDomain]) -> Result<Vec<ThresholdChoice>> {
    (0..domains.len())
        .map(|m| select_threshold(&attribute_decisions(records, domains, m)?))
        .collect()
}

/// Every metric for one scored test set.
pub fn evaluate(
    records: &[PredictionRecord],
    domains: &[AttributeDomain],
    scorer: &str,
    fingerprint: &str,
    seed: u64,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let mut attributes = Vec::with_capacity(domains.len());
    for (m, d) in domains.iter().enumerate() {
        let decisions = attribute_decisions(records, domains, m)?;
        let known: Vec<(f64, bool)> = decisions
            .iter()
            .filter(|x| !x.unknown)
            .map(|x| (x.confidence, x.correct))
            .collect();
        let unknown: Vec<f64> = decisions.iter().filter(|x| x.unknown).map(|x| x.confidence).collect();
        let known_scores: Vec<f64> = known.iter().map(|k| k.0).collect();
        let context = |e: Error| Error::Metric(format!("attribute `{}`: {e}", d.name));
        attributes.push(AttributeMetrics {
            name: d.name.clone(),
            auroc: auroc(&known_scores, &unknown).map_err(context)?,
            oscr: oscr(&known, &unknown).map_err(context)?,
            threshold: select_threshold(&decisions)?,
        });
    }
    let thresholds: Vec<f64> = attributes.iter().map(|a| a.threshold.threshold).collect();
    let n = attributes.len() as f64;
    let average_auroc = attributes.iter().map(|a| a.auroc).sum::<f64>() / n;
    let average_oscr = attributes.iter().map(|a| a.oscr).sum::<f64>() / n;
    Ok(EvalReport {
        fingerprint: fingerprint.to_string(),
        scorer: scorer.to_string(),
        per_seed: vec![SeedMetrics {
            seed,
            auroc: attributes.iter().map(|a| a.auroc).collect(),
            oscr: attributes.iter().map(|a| a.oscr).collect(),
            average_auroc,
            average_oscr,
        }],
        average_auroc,
        average_oscr,
        confidence_matrix: confidence_matrix(records, domains, options.include_unseen_combos)?,
        explainability_matrix: Some(explainability_matrix(
            records,
            domains.len(),
            &thresholds,
            options.include_unseen_combos,
        )?),
        attributes,
    })
}

/// Mean written as an offset from the first value, so identical inputs
/// reproduce that value exactly.
fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let n = values.clone().count() as f64;
    first + values.map(|v| v - first).sum::<f64>() / n
}

fn mean_matrix(ms: &[&LabeledMatrix]) -> Result<LabeledMatrix> {
    let first = ms[0];
    if ms.iter().any(|m| {
        m.row_labels != first.row_labels
            || m.column_labels != first.column_labels
            || m.values.len() != first.values.len()
            || m.values.iter().zip(&first.values).any(|(a, b)| a.len() != b.len())
    }) {
        return Err(Error::Aggregation("matrices differ in layout".into()));
    }
    Ok(LabeledMatrix {
        row_labels: first.row_labels.clone(),
        column_labels: first.column_labels.clone(),
        values: (0..first.values.len())
            .map(|r| {
                (0..first.values[r].len())
                    .map(|c| mean(ms.iter().map(|m| m.values[r][c])))
                    .collect()
            })
            .collect(),
        counts: (0..first.counts.len()).map(|i| mean(ms.iter().map(|m| m.counts[i]))).collect(),
    })
}

/// Element-wise mean over seeds; per-seed values are concatenated.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Aggregation("no reports to aggregate".into()))?;
    if let Some(r) = reports.iter().find(|r| r.fingerprint != first.fingerprint) {
        return Err(Error::Aggregation(format!(
            "configuration fingerprints differ: {} vs {}",
            first.fingerprint, r.fingerprint
        )));
    }
    if let Some(r) = reports.iter().find(|r| r.scorer != first.scorer) {
        return Err(Error::Aggregation(format!("scorers differ: {} vs {}", first.scorer, r.scorer)));
    }
    if reports.iter().any(|r| r.attributes.len() != first.attributes.len()) {
        return Err(Error::Aggregation("reports cover different attribute counts".into()));
    }
    let attributes = (0..first.attributes.len())
        .map(|m| {
            let of = |f: fn(&AttributeMetrics) -> f64| mean(reports.iter().map(move |r| f(&r.attributes[m])));
            AttributeMetrics {
                name: first.attributes[m].name.clone(),
                auroc: of(|a| a.auroc),
                oscr: of(|a| a.oscr),
                threshold: ThresholdChoice {
                    threshold: of(|a| a.threshold.threshold),
                    micro_f1: of(|a| a.threshold.micro_f1),
                    flagged: reports.iter().any(|r| r.attributes[m].threshold.flagged),
                },
            }
        })
        .collect();
    let conf: Vec<&LabeledMatrix> = reports.iter().map(|r| &r.confidence_matrix).collect();
    let expl: Option<Vec<&LabeledMatrix>> = reports.iter().map(|r| r.explainability_matrix.as_ref()).collect();
    Ok(EvalReport {
        fingerprint: first.fingerprint.clone(),
        scorer: first.scorer.clone(),
        attributes,
        average_auroc: mean(reports.iter().map(|r| r.average_auroc)),
        average_oscr: mean(reports.iter().map(|r| r.average_oscr)),
        confidence_matrix: mean_matrix(&conf)?,
        explainability_matrix: expl.map(|e| mean_matrix(&e)).transpose()?,
        per_seed: reports.iter().flat_map(|r| r.per_seed.iter().cloned()).collect(),
    })
}
