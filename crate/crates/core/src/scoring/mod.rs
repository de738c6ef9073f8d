//! Per-attribute confidence scores (MSP, MLS, OpenMax) and the prediction
//! dump that carries them to the metrics.

mod dump;
mod openmax;
mod weibull;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dump::{read_prediction_dump, write_prediction_dump, DumpSidecar, PredictionDump};
pub use openmax::{
    euclidean, openmax_fit, openmax_fit_attribute, AttributeOpenMax, ClassModel, OpenMaxModel, OpenMaxParams,
};
pub use weibull::{fit_weibull, fit_weibull_tail, WeibullModel};

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::splits::{AttributeDomain, GroupTag};

pub(crate) fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Scoring("empty logit vector".into()));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Scoring(format!("non-finite logit {v}")));
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Maximum softmax probability.
pub fn msp_score(logits: &[f64]) -> Result<f64> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    Ok(1.0 / sum)
}

/// Maximum logit.
pub fn mls_score(logits: &[f64]) -> Result<f64> {
    check_logits(logits)?;
    Ok(logits.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Msp,
    Mls,
    OpenMax,
}

impl Scorer {
    pub const ALL: [Scorer; 3] = [Scorer::Msp, Scorer::Mls, Scorer::OpenMax];

    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::Msp => "msp",
            Scorer::Mls => "mls",
            Scorer::OpenMax => "openmax",
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(Scorer::Msp),
            "mls" => Ok(Scorer::Mls),
            "openmax" => Ok(Scorer::OpenMax),
            other => Err(Error::Config(format!("unknown baseline `{other}` (msp, mls, openmax)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePrediction {
    pub true_label: String,
    /// Arg-max over the known values.
    pub predicted_label: String,
    pub confidence: f64,
    /// Raw head output; empty when read back from a dump.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub group: GroupTag,
    pub attributes: Vec<AttributePrediction>,
}

/// Applies `scorer` to every sample. `logits[i][m]` is head `m`'s output for
/// sample `i`; `labels[i]` and `ids[i]` describe the same sample.
pub fn score_samples(
    scorer: Scorer,
    openmax: Option<&OpenMaxModel>,
    domains: &[AttributeDomain],
    ids: &[String],
    groups: &[GroupTag],
    labels: &[Vec<String>],
    logits: &[Vec<Vec<f64>>],
) -> Result<Vec<PredictionRecord>> {
    if ids.len() != logits.len() || groups.len() != logits.len() || labels.len() != logits.len() {
        return Err(Error::Scoring("sample ids, groups, labels and logits differ in length".into()));
    }
    if scorer == Scorer::OpenMax && openmax.is_none() {
        return Err(Error::Scoring("OpenMax scoring requires a fitted model".into()));
    }
    let mut out = Vec::with_capacity(ids.len());
    for i in 0..ids.len() {
        if logits[i].len() != domains.len() || labels[i].len() != domains.len() {
            return Err(Error::Scoring(format!("sample {} does not have one output per attribute", ids[i])));
        }
        let mut attributes = Vec::with_capacity(domains.len());
        for (m, d) in domains.iter().enumerate() {
            let l = &logits[i][m];
            if l.len() != d.known_values.len() {
                return Err(Error::Scoring(format!(
                    "head {} produced {} logits for {} known values",
                    m + 1,
                    l.len(),
                    d.known_values.len()
                )));
            }
            let confidence = match scorer {
                Scorer::Msp => msp_score(l)?,
                Scorer::Mls => mls_score(l)?,
                Scorer::OpenMax => openmax.expect("checked above").score(m, l)?.1,
            };
            attributes.push(AttributePrediction {
                true_label: labels[i][m].clone(),
                predicted_label: d.known_values[argmax(l)].clone(),
                confidence,
                logits: l.clone(),
            });
        }
        out.push(PredictionRecord {
            sample_id: ids[i].clone(),
            group: groups[i],
            attributes,
        });
    }
    Ok(out)
}
