use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sample's outcome for a single attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub confidence: f64,
    /// The true value is unknown for this attribute.
    pub unknown: bool,
    /// The arg-max prediction matches the true (known) value.
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub micro_f1: f64,
    /// No unknown samples were available; the threshold sits below every
    /// confidence.
    pub flagged: bool,
}

/// Picks the threshold maximizing micro-F1 over the known classes plus
/// "unknown", where a sample is called unknown iff `confidence < threshold`.
///
/// Candidates are the midpoints between consecutive distinct confidences and
/// one sentinel beyond each end. Each sample gets exactly one predicted and
/// one true label, so micro-F1 equals the fraction of correct decisions.
/// Ties go to the larger threshold.
pub fn select_threshold(decisions: &[Decision]) -> Result<ThresholdChoice> {
    if decisions.is_empty() {
        return Err(Error::Metric("no samples to select a threshold from".into()));
    }
    if let Some(d) = decisions.iter().find(|d| d.confidence.is_nan()) {
        return Err(Error::Metric(format!("NaN confidence in {d:?}")));
    }
    let mut sorted = decisions.to_vec();
    sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    let n = sorted.len();
    let lowest = sorted[0].confidence;
    let highest = sorted[n - 1].confidence;
    let below_all = lowest - 1.0;

    if !sorted.iter().any(|d| d.unknown) {
        let hits = sorted.iter().filter(|d| d.correct).count();
        return Ok(ThresholdChoice {
            threshold: below_all,
            micro_f1: hits as f64 / n as f64,
            flagged: true,
        });
    }

    // Everything at or above the threshold starts out as known.
    let mut hits = sorted.iter().filter(|d| !d.unknown && d.correct).count();
    let mut best = (hits, below_all);
    let mut i = 0;
    while i < n {
        let v = sorted[i].confidence;
        while i < n && sorted[i].confidence == v {
            let d = sorted[i];
            if d.unknown {
                hits += 1;
            } else if d.correct {
                hits -= 1;
            }
            i += 1;
        }
        let threshold = if i < n {
            v + (sorted[i].confidence - v) / 2.0
        } else {
            highest + 1.0
        };
        if hits >= best.0 {
            best = (hits, threshold);
        }
    }
    Ok(ThresholdChoice {
        threshold: best.1,
        micro_f1: best.0 as f64 / n as f64,
        flagged: false,
    })
}
