use serde::{Deserialize, Serialize};

use super::weibull::{fit_weibull_tail, WeibullModel};
use super::{check_logits, softmax};
use crate::error::{Error, Result};
use crate::model::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenMaxParams {
    #[serde(default = "default_tail_size")]
    pub tail_size: usize,
    /// Number of top-ranked classes revised; `None` means `min(3, K)`.
    #[serde(default)]
    pub alpha: Option<usize>,
    /// Fit only on correctly classified samples.
    #[serde(default = "default_true")]
    pub correct_only: bool,
}

fn default_tail_size() -> usize {
    20
}

fn default_true() -> bool {
    true
}

impl Default for OpenMaxParams {
    fn default() -> Self {
        OpenMaxParams {
            tail_size: default_tail_size(),
            alpha: None,
            correct_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    /// Mean activation vector.
    pub mav: Vec<f64>,
    pub weibull: WeibullModel,
}

/// OpenMax calibration for one attribute head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeOpenMax {
    pub classes: Vec<ClassModel>,
    pub alpha: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxModel {
    pub params: OpenMaxParams,
    pub attributes: Vec<AttributeOpenMax>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fits class means and tail models from one head's activations.
///
/// `labels[i]` is the true class of `activations[i]`; `class_names` is used
/// only for error messages and fixes the class count.
pub fn openmax_fit_attribute(
    activations: &[Vec<f64>],
    labels: &[usize],
    class_names: &[String],
    params: &OpenMaxParams,
) -> Result<AttributeOpenMax> {
    let k = class_names.len();
    if k == 0 {
        return Err(Error::Fit("attribute has no known classes".into()));
    }
    if params.tail_size < 2 {
        return Err(Error::Fit(format!("tail_size must be at least 2, got {}", params.tail_size)));
    }
    let alpha = params.alpha.unwrap_or(k.min(3));
    if alpha == 0 || alpha > k {
        return Err(Error::Fit(format!("alpha must lie in 1..={k}, got {alpha}")));
    }
    if activations.len() != labels.len() {
        return Err(Error::Fit(format!(
            "{} activation vectors for {} labels",
            activations.len(),
            labels.len()
        )));
    }
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
    for (a, &y) in activations.iter().zip(labels) {
        if a.len() != k || y >= k {
            return Err(Error::Fit(format!("activation of length {} with label {y} for {k} classes", a.len())));
        }
        check_logits(a).map_err(|e| Error::Fit(e.to_string()))?;
        if !params.correct_only || argmax(a) == y {
            members[y].push(a);
        }
    }
    let mut classes = Vec::with_capacity(k);
    for (c, rows) in members.iter().enumerate() {
        if rows.len() < params.tail_size {
            return Err(Error::Fit(format!(
                "class `{}` has {} usable samples, tail_size is {}",
                class_names[c],
                rows.len(),
                params.tail_size
            )));
        }
        let mut mav = vec![0.0; k];
        for r in rows {
            for (m, v) in mav.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mav.iter_mut().for_each(|m| *m /= rows.len() as f64);
        let distances: Vec<f64> = rows.iter().map(|r| euclidean(r, &mav)).collect();
        let weibull = fit_weibull_tail(&distances, params.tail_size)
            .map_err(|e| Error::Fit(format!("class `{}`: {e}", class_names[c])))?;
        classes.push(ClassModel { mav, weibull });
    }
    Ok(AttributeOpenMax { classes, alpha })
}

/// Fits every head. `activations[i][m]` and `labels[i][m]` follow the layout
/// of extracted activations.
pub fn openmax_fit(
    activations: &[Vec<Vec<f64>>],
    labels: &[Vec<usize>],
    class_names: &[Vec<String>],
    params: &OpenMaxParams,
) -> Result<OpenMaxModel> {
    let attributes = class_names
        .iter()
        .enumerate()
        .map(|(m, names)| {
            let acts: Vec<Vec<f64>> = activations.iter().map(|a| a[m].clone()).collect();
            let ys: Vec<usize> = labels.iter().map(|l| l[m]).collect();
            openmax_fit_attribute(&acts, &ys, names, params)
        })
        .collect::<Result<_>>()?;
    Ok(OpenMaxModel {
        params: *params,
        attributes,
    })
}

impl AttributeOpenMax {
    /// Revised probabilities over the known classes followed by the unknown
    /// pseudo-class, and the revised probability of the arg-max class.
    pub fn score(&self, logits: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_logits(logits)?;
        if logits.len() != self.classes.len() {
            return Err(Error::Scoring(format!(
                "{} logits for an OpenMax model of {} classes",
                logits.len(),
                self.classes.len()
            )));
        }
        let mut ranked: Vec<usize> = (0..logits.len()).collect();
        ranked.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        let mut revised = logits.to_vec();
        let mut unknown = 0.0;
        let alpha = self.alpha as f64;
        for (r, &c) in ranked.iter().take(self.alpha).enumerate() {
            let weight = (alpha - r as f64) / alpha;
            let cdf = self.classes[c].weibull.cdf(euclidean(logits, &self.classes[c].mav));
            let shaved = logits[c] * weight * cdf;
            revised[c] = logits[c] - shaved;
            unknown += shaved;
        }
        revised.push(unknown);
        let probs = softmax(&revised);
        let confidence = probs[argmax(logits)];
        Ok((probs, confidence))
    }
}

impl OpenMaxModel {
    pub fn score(&self, attribute: usize, logits: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.attributes
            .get(attribute)
            .ok_or_else(|| Error::Scoring(format!("OpenMax model has no fit for attribute {}", attribute + 1)))?
            .score(logits)
    }
}
