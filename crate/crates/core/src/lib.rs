//! Multi-attribute open-set recognition benchmark.
//!
//! Images carry several attributes (e.g. digit shape and colour). Each
//! attribute has known values, seen in training, and unknown values that only
//! appear at test time. A multi-head classifier predicts every attribute and a
//! per-attribute confidence score that is thresholded to flag unknown values.
//!
//! The crate covers the full pipeline:
//!
//! * [`splits`]: attribute domains, correlated training combinations and
//!   balanced test groups, plus the built-in dataset presets.
//! * [`datagen`] and [`ingest`]: dataset synthesis and adapters for external
//!   image collections, producing a [`datagen::DatasetManifest`].
//! * [`model`]: the shared-backbone multi-head network, its duplicated
//!   variant and the training loop.
//! * [`scoring`]: MSP, MLS and OpenMax confidence scores and the prediction
//!   dump format.
//! * [`metrics`]: AUROC, OSCR, cross-attribute confidence matrices,
//!   threshold selection and explainability matrices.
//! * [`harness`]: the experiment runner behind the `maosr` CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod scoring;
pub mod splits;

pub use error::{Error, Result};
