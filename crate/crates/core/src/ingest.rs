//! Adapters from externally supplied image collections to dataset manifests.
//!
//! An asset index is a CSV of `path,label_1,...,label_k` rows. Raw labels are
//! translated to value identifiers through a JSON object mapping raw strings
//! to identifiers; rows whose labels do not map into the attribute domains
//! are dropped and counted.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::datagen::{
    combination_rng, compose_object_on_background, validation_count, Background, DatasetManifest,
    ManifestBuilder, Partition,
};
use crate::error::{Error, IoContext, Result};
use crate::splits::{AttributeDomain, Combination, GroupTag, SplitPlan, TestGroup};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetRow {
    /// Absolute, or relative to the index file's directory.
    pub path: PathBuf,
    pub raw_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExternalAssetIndex {
    pub rows: Vec<AssetRow>,
    pub label_mapping: BTreeMap<String, String>,
    pub base_dir: PathBuf,
}

/// Rows kept after label mapping plus counts of dropped rows by reason.
#[derive(Debug, Clone, Default)]
pub struct MappedAssets {
    pub by_combination: BTreeMap<Combination, Vec<PathBuf>>,
    pub excluded: BTreeMap<String, usize>,
}

impl ExternalAssetIndex {
    pub fn load(index_csv: &Path, mapping_json: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(mapping_json).at(mapping_json)?;
        let label_mapping: BTreeMap<String, String> = serde_json::from_str(&text)?;
        let mut reader = csv::Reader::from_path(index_csv)?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Ingestion(format!(
                    "{}: rows need a path and at least one label",
                    index_csv.display()
                )));
            }
            rows.push(AssetRow {
                path: PathBuf::from(&rec[0]),
                raw_labels: rec.iter().skip(1).map(str::to_string).collect(),
            });
        }
        Ok(ExternalAssetIndex {
            rows,
            label_mapping,
            base_dir: index_csv.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Maps every row onto `domains`, one label column per domain.
    pub fn map_labels(&self, domains: &[AttributeDomain]) -> Result<MappedAssets> {
        let mut out = MappedAssets::default();
        for row in &self.rows {
            if row.raw_labels.len() != domains.len() {
                return Err(Error::Ingestion(format!(
                    "row `{}` has {} labels, expected {}",
                    row.path.display(),
                    row.raw_labels.len(),
                    domains.len()
                )));
            }
            let mut combo = Vec::with_capacity(domains.len());
            let mut reason = None;
            for (raw, d) in row.raw_labels.iter().zip(domains) {
                match self.label_mapping.get(raw) {
                    None => reason = Some("unmapped_label"),
                    Some(v) if !d.is_known(v) && !d.is_unknown(v) => reason = Some("label_outside_domain"),
                    Some(v) => combo.push(v.clone()),
                }
                if reason.is_some() {
                    break;
                }
            }
            match reason {
                Some(r) => *out.excluded.entry(r.to_string()).or_insert(0) += 1,
                None => out.by_combination.entry(combo).or_default().push(self.resolve(&row.path)),
            }
        }
        Ok(out)
    }
}

fn load_rgb(path: &Path, size: u32) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    Ok(if rgb.dimensions() == (size, size) {
        rgb
    } else {
        imageops::resize(&rgb, size, size, FilterType::Triangle)
    })
}

fn shuffled<R: Rng>(paths: &[PathBuf], rng: &mut R) -> Vec<PathBuf> {
    let mut v = paths.to_vec();
    v.sort();
    v.shuffle(rng);
    v
}

/// Builds a manifest from real labelled images.
///
/// Training combinations must each have assets; they are balanced by
/// downsampling to the scarcest one (capped at `samples_per_combination`)
/// after holding out up to `test_samples_per_tuple` images (at most half)
/// per combination for the Known test group. Every other feasible tuple
/// goes to the test partition, capped at `test_samples_per_tuple`.
pub fn ingest_utzappos(
    index: &ExternalAssetIndex,
    plan: &SplitPlan,
    seed: u64,
    image_size: u32,
    root: &Path,
) -> Result<DatasetManifest> {
    let mapped = index.map_labels(&plan.domains)?;
    let missing: Vec<String> = plan
        .train_combinations
        .iter()
        .filter(|c| mapped.by_combination.get(*c).is_none_or(Vec::is_empty))
        .map(|c| format!("({})", c.join(", ")))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingestion(format!(
            "training combinations without assets: {}",
            missing.join(", ")
        )));
    }

    let cap = plan.test_samples_per_tuple;
    let mut train_pools = BTreeMap::new();
    let mut test_pools: BTreeMap<Combination, Vec<PathBuf>> = BTreeMap::new();
    for (combo, paths) in &mapped.by_combination {
        let mut rng = combination_rng(seed, Partition::Test, combo);
        let mut order = shuffled(paths, &mut rng);
        if plan.train_combinations.contains(combo) {
            let held = cap.min(order.len() / 2);
            test_pools.insert(combo.clone(), order.drain(..held).collect());
            train_pools.insert(combo.clone(), order);
        } else {
            order.truncate(cap);
            test_pools.insert(combo.clone(), order);
        }
    }
    let per_combo = train_pools
        .values()
        .map(Vec::len)
        .min()
        .unwrap_or(0)
        .min(plan.samples_per_combination);
    let n_val = validation_count(per_combo);
    if per_combo <= n_val {
        return Err(Error::Ingestion(format!(
            "scarcest training combination leaves {per_combo} images, too few for train and validation"
        )));
    }

    let mut plan = plan.clone();
    plan.samples_per_combination = per_combo;
    plan.test_groups = BTreeMap::new();
    for combo in test_pools.keys() {
        let tag = plan.assign_group(combo)?;
        let group = match tag {
            GroupTag::KnownSeen | GroupTag::KnownUnseenCombo => TestGroup::Known,
            GroupTag::OodAttr(m) => TestGroup::OodAttr(m),
            GroupTag::OodAll => TestGroup::OodAll,
        };
        plan.test_groups.entry(group).or_default().insert(combo.clone());
    }

    let size = image_size as usize;
    let mut builder = ManifestBuilder::new(root, plan.clone(), [3, size, size]);
    for (combo, pool) in &train_pools {
        for (k, path) in pool.iter().take(per_combo).enumerate() {
            let part = if k < n_val { Partition::Val } else { Partition::Train };
            builder.add(part, combo, &load_rgb(path, image_size)?)?;
        }
    }
    for (combo, pool) in &test_pools {
        for path in pool {
            builder.add(Partition::Test, combo, &load_rgb(path, image_size)?)?;
        }
    }
    let mut manifest = builder.finish("ut-zappos", seed, false);
    manifest.info.downsampled_to = Some(per_combo);
    manifest.info.excluded_rows = mapped.excluded;
    manifest.save()?;
    Ok(manifest)
}

/// Where composite backgrounds come from.
#[derive(Debug, Clone)]
pub enum BackgroundSource {
    /// Scene images indexed by one label column.
    Index(ExternalAssetIndex),
    /// Flat fills keyed by value identifier.
    FlatColors(BTreeMap<String, [u8; 3]>),
}

type PoolSplit = (Vec<PathBuf>, Vec<PathBuf>);

/// Per-label asset pools split into train (first 80%) and test parts.
fn split_pools(
    index: &ExternalAssetIndex,
    domain: &AttributeDomain,
    seed: u64,
) -> Result<(BTreeMap<String, PoolSplit>, BTreeMap<String, usize>)> {
    let mapped = index.map_labels(std::slice::from_ref(domain))?;
    let mut pools = BTreeMap::new();
    for (combo, paths) in mapped.by_combination {
        let mut rng = combination_rng(seed, Partition::Train, &combo);
        let mut order = shuffled(&paths, &mut rng);
        let test = if order.len() >= 2 { order.split_off(order.len() * 4 / 5) } else { order.clone() };
        pools.insert(combo[0].clone(), (order, test));
    }
    Ok((pools, mapped.excluded))
}

/// Object-on-background composites for a two-attribute plan whose first
/// attribute is the object and second the background (scene or colour).
pub fn ingest_composite(
    objects: &ExternalAssetIndex,
    backgrounds: &BackgroundSource,
    plan: &SplitPlan,
    seed: u64,
    image_size: u32,
    root: &Path,
) -> Result<DatasetManifest> {
    if plan.attribute_count() != 2 {
        return Err(Error::Ingestion("composites need an object and a background attribute".into()));
    }
    let (object_pools, mut excluded) = split_pools(objects, &plan.domains[0], seed)?;
    if object_pools.is_empty() {
        return Err(Error::Ingestion("object index has no usable rows".into()));
    }
    let scene_pools = match backgrounds {
        BackgroundSource::Index(index) => {
            if index.rows.is_empty() {
                return Err(Error::Ingestion("background index is empty".into()));
            }
            let (pools, ex) = split_pools(index, &plan.domains[1], seed ^ 1)?;
            for (k, v) in ex {
                *excluded.entry(format!("background_{k}")).or_insert(0) += v;
            }
            if pools.is_empty() {
                return Err(Error::Ingestion("background index has no usable rows".into()));
            }
            Some(pools)
        }
        BackgroundSource::FlatColors(colors) => {
            if colors.is_empty() {
                return Err(Error::Ingestion("no background colours given".into()));
            }
            None
        }
    };

    let size = image_size as usize;
    let mut builder = ManifestBuilder::new(root, plan.clone(), [3, size, size]);
    let render = |builder: &mut ManifestBuilder, partition: Partition, combo: &Combination, count: usize, val: usize| -> Result<()> {
        let pick = |pools: &(Vec<PathBuf>, Vec<PathBuf>)| -> Vec<PathBuf> {
            if partition == Partition::Test { pools.1.clone() } else { pools.0.clone() }
        };
        let obj_paths = object_pools.get(&combo[0]).map(pick).unwrap_or_default();
        if obj_paths.is_empty() {
            return Err(Error::Ingestion(format!("no object assets for `{}`", combo[0])));
        }
        let mut rng = combination_rng(seed, partition, combo);
        for k in 0..count {
            let obj_path = &obj_paths[rng.random_range(0..obj_paths.len())];
            let obj: DynamicImage = image::open(obj_path).map_err(|source| Error::Image {
                path: obj_path.clone(),
                source,
            })?;
            let background = match (&scene_pools, backgrounds) {
                (Some(pools), _) => {
                    let paths = pools.get(&combo[1]).map(pick).unwrap_or_default();
                    if paths.is_empty() {
                        return Err(Error::Ingestion(format!("no background assets for `{}`", combo[1])));
                    }
                    let p = &paths[rng.random_range(0..paths.len())];
                    Background::Image(
                        image::open(p)
                            .map_err(|source| Error::Image { path: p.clone(), source })?
                            .to_rgb8(),
                    )
                }
                (None, BackgroundSource::FlatColors(colors)) => Background::Flat(
                    *colors
                        .get(&combo[1])
                        .ok_or_else(|| Error::Ingestion(format!("no RGB value for `{}`", combo[1])))?,
                ),
                (None, BackgroundSource::Index(_)) => unreachable!("index backgrounds always have pools"),
            };
            let img = compose_object_on_background(&obj, &background, image_size, image_size, &mut rng)?;
            let part = if k < val { Partition::Val } else { partition };
            builder.add(part, combo, &img)?;
        }
        Ok(())
    };

    let n = plan.samples_per_combination;
    let n_val = validation_count(n);
    for combo in &plan.train_combinations {
        render(&mut builder, Partition::Train, combo, n, n_val)?;
    }
    let tuples: BTreeSet<&Combination> = plan.test_groups.values().flatten().collect();
    for combo in tuples {
        render(&mut builder, Partition::Test, combo, plan.test_samples_per_tuple, 0)?;
    }
    let mut manifest = builder.finish("composite", seed, true);
    manifest.info.excluded_rows = excluded;
    manifest.save()?;
    Ok(manifest)
}
