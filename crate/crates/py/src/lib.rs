//! Python bindings: confidence scores, open-set metrics, split presets and
//! the experiment pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use maosr::harness::{compare_runs, run_experiment as run, CompareMetric, ExperimentConfig};
use maosr::metrics::{self, EvalReport};
use maosr::scoring;
use maosr::splits::{build_combinations, builtin_preset, CorrelationKind, PRESET_NAMES};
use maosr::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Stage { .. } | Error::Training(_) | Error::Locked { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Maximum softmax probability of one logit vector.
#[pyfunction]
fn msp_score(logits: Vec<f64>) -> PyResult<f64> {
    scoring::msp_score(&logits).map_err(to_py)
}

/// Maximum logit of one logit vector.
#[pyfunction]
fn mls_score(logits: Vec<f64>) -> PyResult<f64> {
    scoring::mls_score(&logits).map_err(to_py)
}

/// AUROC of known versus unknown scores, ties counting one half.
#[pyfunction]
fn auroc(known: Vec<f64>, unknown: Vec<f64>) -> PyResult<f64> {
    metrics::auroc(&known, &unknown).map_err(to_py)
}

/// OSCR from `(confidence, correct)` pairs of known samples and the scores
/// of unknown samples.
#[pyfunction]
fn oscr(known: Vec<(f64, bool)>, unknown: Vec<f64>) -> PyResult<f64> {
    metrics::oscr(&known, &unknown).map_err(to_py)
}

/// Names of the built-in dataset presets.
#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

/// Training combinations of a built-in preset, e.g. `("color-mnist", "sc")`.
#[pyfunction]
#[pyo3(signature = (dataset, correlation, rotation_seed = 0))]
fn combinations(dataset: &str, correlation: &str, rotation_seed: u64) -> PyResult<Vec<Vec<String>>> {
    let kind: CorrelationKind = correlation.parse().map_err(to_py)?;
    let preset = builtin_preset(dataset, kind).map_err(to_py)?;
    let set = build_combinations(&preset.domains, &preset.config, rotation_seed).map_err(to_py)?;
    Ok(set.into_iter().collect())
}

/// Runs the full pipeline for an experiment config given as JSON text and
/// returns the experiment directory. The GIL is released while it runs.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let outcome = py.detach(|| run(&config)).map_err(to_py)?;
    Ok(outcome.experiment_dir.display().to_string())
}

/// Report JSON text for a saved report file.
#[pyfunction]
fn load_report(path: PathBuf) -> PyResult<String> {
    let report = EvalReport::load(&path).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// `(row_labels, column_labels, values)` for one metric over evaluated
/// experiment directories.
#[pyfunction]
#[pyo3(signature = (experiments, metric = "avg_oscr"))]
#[allow(clippy::type_complexity)]
fn compare(experiments: Vec<PathBuf>, metric: &str) -> PyResult<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let metric: CompareMetric = metric.parse().map_err(to_py)?;
    let table = compare_runs(&experiments, metric).map_err(to_py)?;
    Ok((table.row_labels, table.column_labels, table.values))
}

#[pymodule]
#[pyo3(name = "maosr")]
fn maosr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(msp_score, m)?)?;
    m.add_function(wrap_pyfunction!(mls_score, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(oscr, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(combinations, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(load_report, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
