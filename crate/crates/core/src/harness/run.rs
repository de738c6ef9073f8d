use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::figures::emit_figures;
use crate::datagen::{generate_color_mnist, ColorMnistOptions, DatasetManifest, DigitPool, Partition, MANIFEST_JSON};
use crate::error::{Error, IoContext, Result};
use crate::ingest::{ingest_composite, ingest_utzappos, BackgroundSource, ExternalAssetIndex};
use crate::metrics::{aggregate_seeds, evaluate, EvalReport};
use crate::model::{
    extract_activations, train, BackboneSpec, Checkpoint, ModelSpec, TrainConfig,
};
use crate::scoring::{
    openmax_fit, read_prediction_dump, score_samples, write_prediction_dump, DumpSidecar, OpenMaxModel, Scorer,
};
use crate::splits::{SplitPreset, TestGroupSource};

const INFERENCE_BATCH: usize = 256;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Train,
    Score,
    Evaluate,
    Aggregate,
    Figures,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Aggregate => "aggregate",
            Stage::Figures => "figures",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Trained,
    Scored,
    Evaluated,
}

/// Persisted state of one (configuration, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub fingerprint: String,
    pub dataset_id: String,
    pub status: RunStatus,
    /// Artifact name to file name inside the run directory.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    fn advance(&mut self, status: RunStatus) {
        self.status = self.status.max(status);
    }

    fn has(&self, dir: &Path, artifact: &str) -> bool {
        self.artifacts.get(artifact).is_some_and(|f| dir.join(f).is_file())
    }

    fn record(&mut self, artifact: &str, file: &str) {
        self.artifacts.insert(artifact.to_string(), file.to_string());
    }
}

/// Result of a pipeline invocation that reached aggregation.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub fingerprint: String,
    pub experiment_dir: PathBuf,
    pub reports: BTreeMap<Scorer, EvalReport>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentOutcome {
    pub fn report(&self, scorer: Scorer) -> Option<&EvalReport> {
        self.reports.get(&scorer)
    }
}

/// Exclusive lock backed by a file holding the owner's pid. A lock whose
/// owner no longer runs is taken over.
#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

fn process_alive(pid: u32) -> bool {
    if pid == std::process::id() {
        return true;
    }
    let proc = Path::new("/proc");
    !proc.is_dir() || proc.join(pid.to_string()).exists()
}

impl LockGuard {
    pub fn acquire(path: &Path) -> Result<Self> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).at(path)?;
                    return Ok(LockGuard { path: path.to_path_buf() });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if process_alive(pid) => {
                            return Err(Error::Locked {
                                path: path.to_path_buf(),
                                pid,
                            })
                        }
                        _ => {
                            warn!("taking over stale lock {}", path.display());
                            match std::fs::remove_file(path) {
                                Ok(()) => {}
                                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                                Err(e) => return Err(Error::io(path, e)),
                            }
                        }
                    }
                }
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        Err(Error::Locked {
            path: path.to_path_buf(),
            pid: 0,
        })
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).at(path)
}

fn required(path: &Option<PathBuf>, what: &str, config: &ExperimentConfig) -> Result<PathBuf> {
    path.as_deref()
        .map(|p| config.asset_path(p))
        .ok_or_else(|| Error::Config(format!("dataset `{}` needs `assets.{what}`", config.dataset)))
}

pub fn default_image_size(preset: &SplitPreset) -> usize {
    if preset.name.starts_with("color-mnist") {
        32
    } else {
        64
    }
}

fn synthesize(config: &ExperimentConfig, preset: &SplitPreset, root: &Path) -> Result<DatasetManifest> {
    let plan = preset.plan(config.rotation_seed)?;
    let size = config.image_size.unwrap_or_else(|| default_image_size(preset));
    let seed = config.dataset_seed;
    let a = &config.assets;
    let is_digits = preset.domains.first().is_some_and(|d| d.name == "digit") && preset.color_attribute() == Some(1);
    if is_digits {
        let dir = config.asset_root().join("mnist");
        let (train_pool, test_pool) = DigitPool::load_mnist_dir(&dir)?;
        let options = ColorMnistOptions {
            image_size: size,
            ..ColorMnistOptions::default()
        };
        return generate_color_mnist(&plan, &train_pool, &test_pool, &preset.colors, 0, seed, &options, root);
    }
    let size = u32::try_from(size).map_err(|_| Error::Config(format!("image size {size} is too large")))?;
    if preset.test_groups == TestGroupSource::FromData || a.index.is_some() {
        let index = ExternalAssetIndex::load(
            &required(&a.index, "index", config)?,
            &required(&a.label_mapping, "label_mapping", config)?,
        )?;
        return ingest_utzappos(&index, &plan, seed, size, root);
    }
    let objects = ExternalAssetIndex::load(
        &required(&a.objects, "objects", config)?,
        &required(&a.object_mapping, "object_mapping", config)?,
    )?;
    let backgrounds = if preset.color_attribute() == Some(1) {
        BackgroundSource::FlatColors(preset.colors.clone())
    } else {
        BackgroundSource::Index(ExternalAssetIndex::load(
            &required(&a.backgrounds, "backgrounds", config)?,
            &required(&a.background_mapping, "background_mapping", config)?,
        )?)
    };
    ingest_composite(&objects, &backgrounds, &plan, seed, size, root)
}

/// Generates (or reuses) the dataset of `config` under `<output>/datasets`.
pub fn ensure_dataset(config: &ExperimentConfig) -> Result<DatasetManifest> {
    let preset = config.preset()?;
    let datasets = config.output.join("datasets");
    create_dir(&datasets)?;
    let id = config.dataset_id()?;
    let root = datasets.join(&id);
    if root.join(MANIFEST_JSON).is_file() {
        return DatasetManifest::load(&root);
    }
    let _lock = LockGuard::acquire(&datasets.join(format!("{id}.lock")))?;
    if root.join(MANIFEST_JSON).is_file() {
        return DatasetManifest::load(&root);
    }
    let partial = datasets.join(format!("{id}.partial"));
    if partial.exists() {
        std::fs::remove_dir_all(&partial).at(&partial)?;
    }
    info!("generating dataset {} ({id})", preset.name);
    synthesize(config, &preset, &partial)?;
    std::fs::rename(&partial, &root).at(&root)?;
    DatasetManifest::load(&root)
}

fn model_spec(config: &ExperimentConfig, preset: &SplitPreset, manifest: &DatasetManifest) -> ModelSpec {
    let mut backbone = BackboneSpec::new(config.backbone(preset));
    if let Some(d) = config.training.feature_dim {
        backbone.feature_dim = d;
    }
    let known: Vec<usize> = manifest.plan().domains.iter().map(|d| d.known_values.len()).collect();
    ModelSpec::new(backbone, &known, config.variant, manifest.info.image_shape)
}

fn train_config(config: &ExperimentConfig, preset: &SplitPreset, seed: u64) -> TrainConfig {
    let t = &config.training;
    let lr = t.learning_rate.unwrap_or_else(|| config.backbone(preset).default_learning_rate());
    let mut tc = TrainConfig::new(lr, seed);
    if let Some(e) = t.epochs {
        tc.max_epochs = e;
    }
    if let Some(b) = t.batch_size {
        tc.batch_size = b;
    }
    tc
}

fn predictions_file(s: Scorer) -> String {
    format!("predictions-{}.csv", s.as_str())
}

fn report_file(s: Scorer) -> String {
    format!("report-{}.json", s.as_str())
}

/// One seed's run directory and its persisted record.
struct Run<'a> {
    config: &'a ExperimentConfig,
    preset: &'a SplitPreset,
    manifest: &'a DatasetManifest,
    dir: PathBuf,
    record: RunRecord,
}

impl Run<'_> {
    fn save(&self) -> Result<()> {
        write_json(&self.dir.join("run.json"), &self.record)
    }

    fn stage<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        match f(self) {
            Ok(v) => {
                self.record.failed_stage = None;
                self.record.error = None;
                self.save()?;
                Ok(v)
            }
            Err(e) => {
                self.record.failed_stage = Some(stage.as_str().to_string());
                self.record.error = Some(e.to_string());
                if let Err(save) = self.save() {
                    warn!("could not record failure: {save}");
                }
                Err(e.in_stage(stage.as_str()))
            }
        }
    }

    fn train(&mut self) -> Result<()> {
        if self.record.has(&self.dir, "checkpoint") {
            return Ok(());
        }
        let seed = self.record.seed;
        info!("run {}: training seed {seed}", self.record.run_id);
        let (train_set, _) = self.manifest.load_images(Partition::Train)?;
        let (val_set, _) = self.manifest.load_images(Partition::Val)?;
        let spec = model_spec(self.config, self.preset, self.manifest);
        let tc = train_config(self.config, self.preset, seed);
        let (mut model, log) = train(&spec, &train_set, &val_set, &tc, |e| {
            info!(
                "seed {seed} epoch {}: train {:.4} val {:.4}",
                e.epoch,
                e.train_total(),
                e.val_total()
            )
        })?;
        log.write_csv(&self.dir.join("training_log.csv"))?;
        self.record.record("training_log", "training_log.csv");
        let path = self.dir.join("checkpoint.json");
        let tmp = path.with_extension("tmp");
        Checkpoint::from_model(&mut model, tc, log.selected_epoch).save(&tmp)?;
        std::fs::rename(&tmp, &path).at(&path)?;
        self.record.record("checkpoint", "checkpoint.json");
        self.record.advance(RunStatus::Trained);
        Ok(())
    }

    fn openmax_model(&mut self, model: &mut crate::model::MultiHeadModel<f32>) -> Result<OpenMaxModel> {
        let path = self.dir.join("openmax-model.json");
        if self.record.has(&self.dir, "openmax_model") {
            return Ok(serde_json::from_str(&std::fs::read_to_string(&path).at(&path)?)?);
        }
        let (train_set, _) = self.manifest.load_images(Partition::Train)?;
        let acts = extract_activations(model, &train_set, INFERENCE_BATCH)?;
        let names: Vec<Vec<String>> = self.manifest.plan().domains.iter().map(|d| d.known_values.clone()).collect();
        let fitted = openmax_fit(&acts, &train_set.labels, &names, &self.config.openmax)?;
        write_json(&path, &fitted)?;
        self.record.record("openmax_model", "openmax-model.json");
        Ok(fitted)
    }

    fn score(&mut self, baselines: &[Scorer]) -> Result<()> {
        let pending: Vec<Scorer> = baselines
            .iter()
            .copied()
            .filter(|s| !self.record.has(&self.dir, &format!("predictions_{}", s.as_str())))
            .collect();
        if pending.is_empty() {
            return Ok(());
        }
        let path = self.dir.join("checkpoint.json");
        let mut model = Checkpoint::load(&path)?.into_model()?;
        let test: Vec<_> = self.manifest.partition(Partition::Test).collect();
        let set = self.manifest.load_unlabeled(&test)?;
        let logits = extract_activations(&mut model, &set, INFERENCE_BATCH)?;
        let ids: Vec<String> = test.iter().map(|r| r.sample_id.clone()).collect();
        let groups: Vec<_> = test.iter().map(|r| r.group).collect();
        let labels: Vec<Vec<String>> = test.iter().map(|r| r.labels.clone()).collect();
        let domains = &self.manifest.plan().domains;
        for scorer in pending {
            let openmax = match scorer {
                Scorer::OpenMax => Some(self.openmax_model(&mut model)?),
                _ => None,
            };
            let records = score_samples(scorer, openmax.as_ref(), domains, &ids, &groups, &labels, &logits)?;
            let sidecar = DumpSidecar {
                scorer: scorer.as_str().to_string(),
                hyperparameters: match scorer {
                    Scorer::OpenMax => serde_json::to_value(self.config.openmax)?,
                    _ => serde_json::Value::Null,
                },
                domains: domains.clone(),
            };
            let file = predictions_file(scorer);
            write_prediction_dump(&self.dir.join(&file), &sidecar, &records)?;
            self.record.record(&format!("predictions_{}", scorer.as_str()), &file);
        }
        if baselines.iter().all(|s| self.record.has(&self.dir, &format!("predictions_{}", s.as_str()))) {
            self.record.advance(RunStatus::Scored);
        }
        Ok(())
    }

    fn evaluate(&mut self, baselines: &[Scorer]) -> Result<Vec<EvalReport>> {
        let mut reports = Vec::with_capacity(baselines.len());
        for &scorer in baselines {
            let key = format!("report_{}", scorer.as_str());
            let path = self.dir.join(report_file(scorer));
            if self.record.has(&self.dir, &key) {
                reports.push(EvalReport::load(&path)?);
                continue;
            }
            let dump = read_prediction_dump(&self.dir.join(predictions_file(scorer)))?;
            let report = evaluate(
                &dump.records,
                &dump.sidecar.domains,
                scorer.as_str(),
                &self.record.fingerprint,
                self.record.seed,
                &self.config.evaluation,
            )?;
            report.save(&path)?;
            self.record.record(&key, &report_file(scorer));
            reports.push(report);
        }
        self.record.advance(RunStatus::Evaluated);
        Ok(reports)
    }
}

fn open_run<'a>(
    config: &'a ExperimentConfig,
    preset: &'a SplitPreset,
    manifest: &'a DatasetManifest,
    seed: u64,
) -> Result<Run<'a>> {
    let run_id = config.run_id(seed)?;
    let dir = config.output.join("runs").join(&run_id);
    create_dir(&dir)?;
    let record_path = dir.join("run.json");
    let record = if record_path.is_file() {
        serde_json::from_str(&std::fs::read_to_string(&record_path).at(&record_path)?)?
    } else {
        RunRecord {
            run_id,
            seed,
            fingerprint: config.fingerprint()?,
            dataset_id: config.dataset_id()?,
            status: RunStatus::Pending,
            artifacts: BTreeMap::new(),
            failed_stage: None,
            error: None,
        }
    };
    let mut snapshot = config.clone();
    snapshot.seeds = vec![seed];
    write_json(&dir.join("config.json"), &snapshot)?;
    let run = Run {
        config,
        preset,
        manifest,
        dir,
        record,
    };
    run.save()?;
    Ok(run)
}

/// Directory holding the seed-aggregated outputs of a configuration.
pub fn experiment_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    Ok(config.output.join("experiments").join(&config.fingerprint()?[..16]))
}

/// Runs every seed of `config` through `until` and, from `Aggregate` on,
/// averages the per-seed reports. Completed stages are skipped.
pub fn run_pipeline(config: &ExperimentConfig, until: Stage) -> Result<Option<ExperimentOutcome>> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let preset = config.preset().map_err(|e| e.in_stage("config"))?;
    let manifest = ensure_dataset(config).map_err(|e| e.in_stage(Stage::Generate.as_str()))?;
    if until == Stage::Generate {
        return Ok(None);
    }
    let mut runs = Vec::with_capacity(config.seeds.len());
    let mut per_seed: BTreeMap<Scorer, Vec<EvalReport>> = BTreeMap::new();
    for &seed in &config.seeds {
        let mut run = open_run(config, &preset, &manifest, seed).map_err(|e| e.in_stage("config"))?;
        let _lock = LockGuard::acquire(&run.dir.join(".lock")).map_err(|e| e.in_stage(Stage::Train.as_str()))?;
        run.stage(Stage::Train, Run::train)?;
        if until >= Stage::Score {
            run.stage(Stage::Score, |r| r.score(&config.baselines))?;
        }
        if until >= Stage::Evaluate {
            let reports = run.stage(Stage::Evaluate, |r| r.evaluate(&config.baselines))?;
            for (s, r) in config.baselines.iter().zip(reports) {
                per_seed.entry(*s).or_default().push(r);
            }
        }
        runs.push(run.record);
    }
    if until < Stage::Aggregate {
        return Ok(None);
    }
    let outcome = aggregate(config, per_seed, runs).map_err(|e| e.in_stage(Stage::Aggregate.as_str()))?;
    if until >= Stage::Figures {
        for report in outcome.reports.values() {
            emit_figures(report, &outcome.experiment_dir).map_err(|e| e.in_stage(Stage::Figures.as_str()))?;
        }
    }
    Ok(Some(outcome))
}

/// Full pipeline: dataset, training, scoring, evaluation, aggregation and
/// figures for every seed and baseline.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_pipeline(config, Stage::Figures)?
        .ok_or_else(|| Error::Aggregation("pipeline stopped before aggregation".into()))
}

#[derive(Serialize)]
struct RunIndex<'a> {
    label: String,
    fingerprint: &'a str,
    runs: Vec<(u64, &'a str)>,
}

fn aggregate(
    config: &ExperimentConfig,
    per_seed: BTreeMap<Scorer, Vec<EvalReport>>,
    runs: Vec<RunRecord>,
) -> Result<ExperimentOutcome> {
    let fingerprint = config.fingerprint()?;
    let dir = experiment_dir(config)?;
    create_dir(&dir)?;
    let mut snapshot = config.clone();
    snapshot.output = PathBuf::from(".");
    snapshot.asset_root = None;
    write_json(&dir.join("config.json"), &snapshot)?;
    write_json(
        &dir.join("runs.json"),
        &RunIndex {
            label: config.label()?,
            fingerprint: &fingerprint,
            runs: runs.iter().map(|r| (r.seed, r.run_id.as_str())).collect(),
        },
    )?;
    let mut reports = BTreeMap::new();
    for (scorer, seed_reports) in per_seed {
        let report = aggregate_seeds(&seed_reports)?;
        report.save(&dir.join(report_file(scorer)))?;
        let name = scorer.as_str();
        report
            .confidence_matrix
            .write_csv(&dir.join(format!("confidence_matrix-{name}.csv")))?;
        if let Some(e) = &report.explainability_matrix {
            e.write_csv(&dir.join(format!("explainability_matrix-{name}.csv")))?;
        }
        info!("{} {name}: average OSCR {:.4}", config.label()?, report.average_oscr);
        reports.insert(scorer, report);
    }
    Ok(ExperimentOutcome {
        fingerprint,
        experiment_dir: dir,
        reports,
        runs,
    })
}
