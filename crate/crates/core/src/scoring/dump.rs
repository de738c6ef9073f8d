use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttributePrediction, PredictionRecord};
use crate::error::{Error, IoContext, Result};
use crate::splits::AttributeDomain;

/// JSON written next to a prediction CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSidecar {
    pub scorer: String,
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
    pub domains: Vec<AttributeDomain>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    pub sidecar: DumpSidecar,
    pub records: Vec<PredictionRecord>,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `sample_id,group,attr_m_true,attr_m_pred,attr_m_conf` rows plus a
/// sidecar JSON with the same stem.
pub fn write_prediction_dump(path: &Path, sidecar: &DumpSidecar, records: &[PredictionRecord]) -> Result<()> {
    let m = sidecar.domains.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "group".to_string()];
    for a in 1..=m {
        header.extend([format!("attr_{a}_true"), format!("attr_{a}_pred"), format!("attr_{a}_conf")]);
    }
    w.write_record(&header)?;
    for r in records {
        if r.attributes.len() != m {
            return Err(Error::Scoring(format!("record {} has {} attributes, expected {m}", r.sample_id, r.attributes.len())));
        }
        let mut row = vec![r.sample_id.clone(), r.group.to_string()];
        for a in &r.attributes {
            row.extend([a.true_label.clone(), a.predicted_label.clone(), a.confidence.to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush().at(path)?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(sidecar)? + "\n").at(&side)?;
    Ok(())
}

/// Reads a dump written by [`write_prediction_dump`] or produced externally
/// in the same format.
pub fn read_prediction_dump(path: &Path) -> Result<PredictionDump> {
    let side = sidecar_path(path);
    let sidecar: DumpSidecar = serde_json::from_str(&std::fs::read_to_string(&side).at(&side)?)?;
    let m = sidecar.domains.len();
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 2 + 3 * m {
            return Err(Error::Validation(format!(
                "{}: row has {} fields, expected {}",
                path.display(),
                row.len(),
                2 + 3 * m
            )));
        }
        let mut attributes = Vec::with_capacity(m);
        for a in 0..m {
            let conf = &row[2 + 3 * a + 2];
            let confidence: f64 = conf
                .parse()
                .map_err(|_| Error::Validation(format!("{}: bad confidence `{conf}`", path.display())))?;
            attributes.push(AttributePrediction {
                true_label: row[2 + 3 * a].to_string(),
                predicted_label: row[2 + 3 * a + 1].to_string(),
                confidence,
                logits: Vec::new(),
            });
        }
        records.push(PredictionRecord {
            sample_id: row[0].to_string(),
            group: row[1].parse()?,
            attributes,
        });
    }
    Ok(PredictionDump { sidecar, records })
}
