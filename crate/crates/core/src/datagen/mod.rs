//! Synthetic dataset generation and the on-disk manifest format.

mod compose;
mod manifest;
mod mnist;

pub use compose::{compose_object_on_background, Background};
pub use manifest::{
    combination_rng, to_planar, validate_manifest, validation_count, DatasetManifest, ManifestBuilder,
    ManifestInfo, Partition, Rule, SampleRecord, Violation, MANIFEST_CSV, MANIFEST_JSON,
};
pub use mnist::{generate_color_mnist, tint_digit, ColorMnistOptions, DigitPool};
