//! Config-driven experiment runner: dataset generation, training, scoring,
//! evaluation, seed aggregation, comparison tables and figures, with
//! resumable run directories.
//!
//! Layout under the output root:
//!
//! * `datasets/<dataset_id>/`: generated images and manifest, shared by
//!   every seed and baseline of a configuration.
//! * `runs/<run_id>/`: one (configuration, seed) run with `run.json`,
//!   `config.json`, the checkpoint, training log, prediction dumps and
//!   per-seed reports.
//! * `experiments/<fingerprint>/`: seed-averaged reports, matrix CSVs and
//!   heatmaps.

mod compare;
mod config;
mod figures;
mod run;

pub use compare::{compare_runs, write_comparison, CompareMetric, ComparisonTable};
pub use config::{AssetSources, ExperimentConfig, TrainingOverrides, ASSET_ROOT_ENV};
pub use figures::{emit_figures, render_heatmap};
pub use run::{
    default_image_size, ensure_dataset, experiment_dir, run_experiment, run_pipeline, ExperimentOutcome,
    LockGuard, RunRecord, RunStatus, Stage,
};
