//! Open-set metrics: AUROC, OSCR, cross-attribute confidence matrix,
//! micro-F1 thresholds, explainability matrix and seed aggregation.

mod curves;
mod matrices;
mod report;
mod thresholds;

pub use curves::{auroc, oscr};
pub use matrices::{
    confidence_matrix, explainability_labels, explainability_matrix, group_columns, LabeledMatrix,
};
pub use report::{
    aggregate_seeds, attribute_decisions, evaluate, select_thresholds, AttributeMetrics, EvalOptions,
    EvalReport, SeedMetrics,
};
pub use thresholds::{select_threshold, Decision, ThresholdChoice};
