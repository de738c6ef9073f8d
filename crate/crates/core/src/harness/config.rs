use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::metrics::EvalOptions;
use crate::model::{BackboneKind, Variant};
use crate::scoring::{OpenMaxParams, Scorer};
use crate::splits::{builtin_preset, CorrelationKind, SplitPreset};

pub const ASSET_ROOT_ENV: &str = "MAOSR_ASSET_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<BackboneKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
}

/// External asset files for presets built from real images. Relative paths
/// resolve against the asset root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSources {
    /// `path,label_1,label_2` index of labelled images (UT-Zappos style).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_mapping: Option<PathBuf>,
    /// `path,label` index of RGBA object crops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_mapping: Option<PathBuf>,
    /// `path,label` index of scene images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backgrounds: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_mapping: Option<PathBuf>,
}

impl AssetSources {
    fn is_empty(&self) -> bool {
        *self == AssetSources::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in preset name or path to a preset JSON file.
    pub dataset: String,
    /// Required for built-in presets other than `ut-zappos`; a preset file
    /// carries its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationKind>,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Scorer>,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seeds dataset sampling; fixed across training seeds.
    #[serde(default)]
    pub dataset_seed: u64,
    /// Offset of the cyclic combination constructions.
    #[serde(default)]
    pub rotation_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_combination: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_samples_per_tuple: Option<usize>,
    /// Side length of generated images; 32 for coloured digits, 64 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(default)]
    pub training: TrainingOverrides,
    #[serde(default)]
    pub openmax: OpenMaxParams,
    #[serde(default)]
    pub evaluation: EvalOptions,
    #[serde(default, skip_serializing_if = "AssetSources::is_empty")]
    pub assets: AssetSources,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Defaults to `$MAOSR_ASSET_ROOT`, then `./assets`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_root: Option<PathBuf>,
}

fn default_baselines() -> Vec<Scorer> {
    vec![Scorer::Msp]
}

fn default_variant() -> Variant {
    Variant::Shared
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Settings that determine a trained model; everything a run id hashes.
#[derive(Serialize)]
struct RunKey<'a> {
    preset: &'a SplitPreset,
    dataset_seed: u64,
    rotation_seed: u64,
    image_size: Option<usize>,
    variant: Variant,
    training: &'a TrainingOverrides,
    openmax: &'a OpenMaxParams,
    evaluation: &'a EvalOptions,
    assets: &'a AssetSources,
}

fn digest(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ExperimentConfig {
    pub fn new(dataset: &str, correlation: CorrelationKind) -> Self {
        ExperimentConfig {
            dataset: dataset.to_string(),
            correlation: Some(correlation),
            baselines: default_baselines(),
            variant: default_variant(),
            seeds: default_seeds(),
            dataset_seed: 0,
            rotation_seed: 0,
            samples_per_combination: None,
            test_samples_per_tuple: None,
            image_size: None,
            training: TrainingOverrides::default(),
            openmax: OpenMaxParams::default(),
            evaluation: EvalOptions::default(),
            assets: AssetSources::default(),
            output: default_output(),
            asset_root: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.baselines.is_empty() {
            return Err(Error::Config("at least one baseline is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {s} is listed twice")));
        }
        if self.training.epochs == Some(0) {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn asset_root(&self) -> PathBuf {
        self.asset_root
            .clone()
            .or_else(|| std::env::var_os(ASSET_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("assets"))
    }

    pub fn asset_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.asset_root().join(p)
        }
    }

    /// The dataset preset with sample-count overrides applied.
    pub fn preset(&self) -> Result<SplitPreset> {
        let path = Path::new(&self.dataset);
        let mut preset = if self.dataset.ends_with(".json") || path.is_file() {
            let p = SplitPreset::load(path)?;
            if let Some(kind) = self.correlation.filter(|k| *k != p.config.kind) {
                return Err(Error::Config(format!(
                    "preset file `{}` is {}, but the config asks for {kind}",
                    self.dataset, p.config.kind
                )));
            }
            p
        } else {
            let kind = match (self.correlation, self.dataset.as_str()) {
                (Some(k), _) => k,
                (None, "ut-zappos") => CorrelationKind::Explicit,
                (None, _) => {
                    return Err(Error::Config(format!(
                        "dataset `{}` needs a correlation (uc, sc or c)",
                        self.dataset
                    )))
                }
            };
            builtin_preset(&self.dataset, kind)?
        };
        if let Some(n) = self.samples_per_combination {
            preset.samples_per_combination = n;
        }
        if let Some(n) = self.test_samples_per_tuple {
            preset.test_samples_per_tuple = n;
        }
        Ok(preset)
    }

    pub fn backbone(&self, preset: &SplitPreset) -> BackboneKind {
        self.training.backbone.unwrap_or(if preset.name.starts_with("color-mnist") {
            BackboneKind::LeNetLike
        } else {
            BackboneKind::ResNet18Like
        })
    }

    /// Hash of every setting except seeds, baselines and locations; equal
    /// fingerprints mean per-seed reports may be averaged.
    pub fn fingerprint(&self) -> Result<String> {
        let preset = self.preset()?;
        digest(&RunKey {
            preset: &preset,
            dataset_seed: self.dataset_seed,
            rotation_seed: self.rotation_seed,
            image_size: self.image_size,
            variant: self.variant,
            training: &self.training,
            openmax: &self.openmax,
            evaluation: &self.evaluation,
            assets: &self.assets,
        })
    }

    pub fn run_id(&self, seed: u64) -> Result<String> {
        let fp = self.fingerprint()?;
        Ok(digest(&(fp, seed))?[..16].to_string())
    }

    /// Identifier of the generated dataset: preset, sampling seeds and assets.
    pub fn dataset_id(&self) -> Result<String> {
        let preset = self.preset()?;
        Ok(digest(&(
            &preset,
            self.dataset_seed,
            self.rotation_seed,
            self.image_size,
            &self.assets,
        ))?[..16].to_string())
    }

    /// Short label such as `color-mnist/uc` or `color-mnist/c-D`.
    pub fn label(&self) -> Result<String> {
        let preset = self.preset()?;
        let suffix = match self.variant {
            Variant::Shared => "",
            Variant::Duplicated => "-D",
        };
        Ok(format!("{}/{}{suffix}", preset.name, preset.config.kind.short_name()))
    }
}
