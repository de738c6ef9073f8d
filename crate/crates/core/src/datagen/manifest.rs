use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::model::ImageSet;
use crate::splits::{Combination, GroupTag, SplitPlan};

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::Validation(format!("unknown partition `{other}`"))),
        }
    }
}

/// One image of a dataset; `path` is relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub path: PathBuf,
    pub labels: Vec<String>,
    pub group: GroupTag,
    pub partition: Partition,
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub generator: String,
    pub plan: SplitPlan,
    pub generator_seed: u64,
    /// `[channels, height, width]` of every image.
    pub image_shape: [usize; 3],
    /// Whether every test tuple must hold the same number of samples.
    pub test_balanced: bool,
    /// Per-combination count after downsampling real data, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsampled_to: Option<usize>,
    /// Rows of the source index that were dropped, keyed by reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub excluded_rows: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub info: ManifestInfo,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn plan(&self) -> &SplitPlan {
        &self.info.plan
    }

    pub fn partition(&self, partition: Partition) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.partition == partition)
    }

    /// Writes `manifest.csv` and `manifest.json` under the root.
    pub fn save(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).at(&self.root)?;
        let csv_path = self.root.join(MANIFEST_CSV);
        let mut w = csv::Writer::from_path(&csv_path)?;
        let mut header = vec!["sample_id".to_string(), "path".to_string()];
        header.extend((1..=self.info.plan.attribute_count()).map(|m| format!("attr_{m}")));
        header.extend(["group".to_string(), "partition".to_string()]);
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.sample_id.clone(), path_string(&r.path)];
            row.extend(r.labels.iter().cloned());
            row.push(r.group.to_string());
            row.push(r.partition.to_string());
            w.write_record(&row)?;
        }
        w.flush().at(&csv_path)?;
        let json_path = self.root.join(MANIFEST_JSON);
        std::fs::write(&json_path, serde_json::to_string_pretty(&self.info)? + "\n").at(&json_path)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let json_path = root.join(MANIFEST_JSON);
        let info: ManifestInfo = serde_json::from_str(&std::fs::read_to_string(&json_path).at(&json_path)?)?;
        let m = info.plan.attribute_count();
        let mut reader = csv::Reader::from_path(root.join(MANIFEST_CSV))?;
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            if row.len() != m + 4 {
                return Err(Error::Validation(format!(
                    "manifest row has {} fields, expected {}",
                    row.len(),
                    m + 4
                )));
            }
            records.push(SampleRecord {
                sample_id: row[0].to_string(),
                path: PathBuf::from(&row[1]),
                labels: (0..m).map(|a| row[2 + a].to_string()).collect(),
                group: row[2 + m].parse()?,
                partition: row[3 + m].parse()?,
            });
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            info,
            records,
        })
    }

    /// Hex digest over the manifest files, used to detect stale caches.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for name in [MANIFEST_JSON, MANIFEST_CSV] {
            let p = self.root.join(name);
            h.update(std::fs::read(&p).at(&p)?);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Decodes the images of `partition` for training. Every record of the
    /// partition must carry only known values.
    pub fn load_images(&self, partition: Partition) -> Result<(ImageSet, Vec<&SampleRecord>)> {
        let records: Vec<&SampleRecord> = self.partition(partition).collect();
        let mut set = ImageSet::new(self.info.image_shape);
        for r in &records {
            let labels = r
                .labels
                .iter()
                .zip(&self.info.plan.domains)
                .map(|(l, d)| {
                    d.known_index(l).ok_or_else(|| {
                        Error::Training(format!("sample {} has non-known label `{l}`", r.sample_id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            set.push(&self.read_pixels(r)?, labels)?;
        }
        Ok((set, records))
    }

    /// Decodes the images of arbitrary records; labels are left empty.
    pub fn load_unlabeled(&self, records: &[&SampleRecord]) -> Result<ImageSet> {
        let mut set = ImageSet::new(self.info.image_shape);
        for r in records {
            set.push(&self.read_pixels(r)?, Vec::new())?;
        }
        Ok(set)
    }

    /// Planar `[C, H, W]` pixels of one record.
    pub fn read_pixels(&self, record: &SampleRecord) -> Result<Vec<u8>> {
        let path = self.root.join(&record.path);
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let [c, h, w] = self.info.image_shape;
        if c != 3 || img.height() as usize != h || img.width() as usize != w {
            return Err(Error::Validation(format!(
                "{} is {}x{}, dataset images are {h}x{w}",
                path.display(),
                img.height(),
                img.width()
            )));
        }
        Ok(to_planar(&img))
    }
}

/// Interleaved RGB to planar `[3, H, W]`.
pub fn to_planar(img: &RgbImage) -> Vec<u8> {
    let n = (img.width() * img.height()) as usize;
    let mut out = vec![0u8; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = px[c];
        }
    }
    out
}

fn path_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Independent generator for one `(seed, partition, combination)` stream.
pub fn combination_rng(seed: u64, partition: Partition, combination: &[String]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(partition.as_str().as_bytes());
    for value in combination {
        h.update((value.len() as u64).to_le_bytes());
        h.update(value.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Writes images to disk while collecting their manifest records.
pub struct ManifestBuilder {
    root: PathBuf,
    plan: SplitPlan,
    image_shape: [usize; 3],
    records: Vec<SampleRecord>,
    counters: BTreeMap<(Partition, Combination), usize>,
}

impl ManifestBuilder {
    pub fn new(root: &Path, plan: SplitPlan, image_shape: [usize; 3]) -> Self {
        ManifestBuilder {
            root: root.to_path_buf(),
            plan,
            image_shape,
            records: Vec::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    pub fn add(&mut self, partition: Partition, labels: &Combination, image: &RgbImage) -> Result<()> {
        let [_, h, w] = self.image_shape;
        if image.height() as usize != h || image.width() as usize != w {
            return Err(Error::Generation(format!(
                "image is {}x{}, dataset images are {h}x{w}",
                image.height(),
                image.width()
            )));
        }
        let group = self.plan.assign_group(labels)?;
        let counter = self.counters.entry((partition, labels.clone())).or_insert(0);
        let index = *counter;
        *counter += 1;
        let dir = format!("{}/{}", partition, labels.join("_"));
        let rel = PathBuf::from(format!("{dir}/{index:05}.png"));
        let full = self.root.join(&rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).at(parent)?;
        }
        image.save(&full).map_err(|source| Error::Image {
            path: full.clone(),
            source,
        })?;
        self.records.push(SampleRecord {
            sample_id: format!("{partition}-{}-{index:05}", labels.join("_")),
            path: rel,
            labels: labels.clone(),
            group,
            partition,
        });
        Ok(())
    }

    pub fn finish(self, generator: &str, seed: u64, test_balanced: bool) -> DatasetManifest {
        DatasetManifest {
            root: self.root,
            info: ManifestInfo {
                generator: generator.to_string(),
                plan: self.plan,
                generator_seed: seed,
                image_shape: self.image_shape,
                test_balanced,
                downsampled_to: None,
                excluded_rows: BTreeMap::new(),
            },
            records: self.records,
        }
    }
}

/// Validation images taken from each training combination's draw.
pub fn validation_count(samples_per_combination: usize) -> usize {
    (samples_per_combination / 10).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Balance,
    PartitionPurity,
    GroupAssignment,
    UniformSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub combination: Option<Combination>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(c) = &self.combination {
            write!(f, " ({})", c.join(", "))?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Checks balance, partition purity and group assignment. Does not read
/// image files.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let plan = &manifest.info.plan;
    let mut out = Vec::new();
    let mut counts: BTreeMap<(Partition, &Combination), usize> = BTreeMap::new();
    for r in &manifest.records {
        match plan.assign_group(&r.labels) {
            Ok(g) if g == r.group => {}
            Ok(g) => out.push(Violation {
                rule: Rule::GroupAssignment,
                combination: Some(r.labels.clone()),
                detail: format!("{} is tagged {} but its labels give {g}", r.sample_id, r.group),
            }),
            Err(e) => out.push(Violation {
                rule: Rule::GroupAssignment,
                combination: Some(r.labels.clone()),
                detail: format!("{}: {e}", r.sample_id),
            }),
        }
        if r.partition != Partition::Test && r.group != GroupTag::KnownSeen {
            out.push(Violation {
                rule: Rule::PartitionPurity,
                combination: Some(r.labels.clone()),
                detail: format!("{} in {} has group {}", r.sample_id, r.partition, r.group),
            });
        }
        *counts.entry((r.partition, &r.labels)).or_insert(0) += 1;
    }

    let mut check = |partition: Partition, expected: Vec<&Combination>| {
        let observed: Vec<usize> = expected
            .iter()
            .map(|c| counts.get(&(partition, *c)).copied().unwrap_or(0))
            .collect();
        let Some(&target) = observed.iter().max() else {
            return;
        };
        for (c, &n) in expected.iter().zip(&observed) {
            if n != target {
                out.push(Violation {
                    rule: Rule::Balance,
                    combination: Some((*c).clone()),
                    detail: format!("{partition} holds {n} samples, other combinations hold {target}"),
                });
            }
        }
    };
    let train: Vec<&Combination> = plan.train_combinations.iter().collect();
    check(Partition::Train, train.clone());
    check(Partition::Val, train);
    if manifest.info.test_balanced {
        check(Partition::Test, plan.test_groups.values().flatten().collect());
    }
    out
}
