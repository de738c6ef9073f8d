//! Loss, optimizer, training loop and activation extraction.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{ModelSpec, ModelState, MultiHeadModel};
use super::tensor::{Param, Scalar, Tensor};
use crate::error::{Error, IoContext, Result};

/// In-memory labelled images stored as 8-bit pixels, `[C, H, W]` per item.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub image_shape: [usize; 3],
    pub pixels: Vec<u8>,
    /// `labels[i][m]`: known-value index of attribute `m` for item `i`.
    pub labels: Vec<Vec<usize>>,
}

impl ImageSet {
    pub fn new(image_shape: [usize; 3]) -> Self {
        ImageSet {
            image_shape,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn push(&mut self, pixels: &[u8], labels: Vec<usize>) -> Result<()> {
        if pixels.len() != self.item_len() {
            return Err(Error::Input(format!(
                "image has {} values, expected {}",
                pixels.len(),
                self.item_len()
            )));
        }
        self.pixels.extend_from_slice(pixels);
        self.labels.push(labels);
        Ok(())
    }

    /// Items `indices` as a `[B, C, H, W]` tensor scaled to `[0, 1]`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let len = self.item_len();
        let scale = T::lit(1.0 / 255.0);
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend(self.pixels[i * len..(i + 1) * len].iter().map(|&p| T::lit(p as f64) * scale));
        }
        let [c, h, w] = self.image_shape;
        Tensor::new(vec![indices.len(), c, h, w], data)
    }
}

/// Mean over the batch of the per-head cross-entropy, plus the gradient of
/// that mean w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let b = logits.batch();
    let k = logits.item_len();
    if labels.len() != b {
        return Err(Error::Input(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut grad = Tensor::zeros(logits.shape.clone());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Input(format!("label {y} out of range for {k} classes")));
        }
        let row: Vec<f64> = logits.row(i).iter().map(|v| v.to_f64().unwrap()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == y { 1.0 } else { 0.0 };
            grad.data[i * k + j] = T::lit((p - target) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}

/// Total multi-head loss `sum_m mean_i CE(logits_m[i], labels[i][m])`,
/// per-head losses and per-head logit gradients.
pub fn multi_head_loss<T: Scalar>(logits: &[Tensor<T>], labels: &[Vec<usize>]) -> Result<(f64, Vec<f64>, Vec<Tensor<T>>)> {
    let mut per_head = Vec::with_capacity(logits.len());
    let mut grads = Vec::with_capacity(logits.len());
    for (m, l) in logits.iter().enumerate() {
        let ys: Vec<usize> = labels.iter().map(|row| row[m]).collect();
        let (loss, g) = cross_entropy(l, &ys)?;
        per_head.push(loss);
        grads.push(g);
    }
    Ok((per_head.iter().sum(), per_head, grads))
}

/// Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].to_f64().unwrap();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p.value[i] = p.value[i] - T::lit(update);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            max_epochs: 400,
            batch_size: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

impl EpochRecord {
    pub fn train_total(&self) -> f64 {
        self.train_loss.iter().sum()
    }

    pub fn val_total(&self) -> f64 {
        self.val_loss.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_at(e, path))?;
        let heads = self.epochs.first().map_or(0, |e| e.train_loss.len());
        let mut header = vec!["epoch".to_string()];
        for kind in ["train_loss", "val_loss", "train_acc", "val_acc"] {
            header.extend((1..=heads).map(|m| format!("{kind}_{m}")));
        }
        header.extend(["train_total".into(), "val_total".into()]);
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string()];
            for values in [&e.train_loss, &e.val_loss, &e.train_accuracy, &e.val_accuracy] {
                row.extend(values.iter().map(|v| format!("{v:.6}")));
            }
            row.push(format!("{:.6}", e.train_total()));
            row.push(format!("{:.6}", e.val_total()));
            w.write_record(&row)?;
        }
        w.flush().at(path)?;
        Ok(())
    }
}

fn csv_at(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Training(format!("{}: {other:?}", path.display())),
    }
}

/// 1-based index of the earliest minimum.
pub fn select_best_epoch(val_totals: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_totals.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

struct PassStats {
    loss: Vec<f64>,
    accuracy: Vec<f64>,
}

fn check_labels(set: &ImageSet, spec: &ModelSpec, what: &str) -> Result<()> {
    if set.image_shape != spec.input_shape {
        return Err(Error::Training(format!(
            "{what} images are {:?}, model expects {:?}",
            set.image_shape, spec.input_shape
        )));
    }
    for row in &set.labels {
        if row.len() != spec.heads.len() || row.iter().zip(&spec.heads).any(|(&y, h)| y >= h.output_dim) {
            return Err(Error::Training(format!("{what} label {row:?} does not fit the model heads")));
        }
    }
    Ok(())
}

fn evaluate<T: Scalar>(model: &mut MultiHeadModel<T>, set: &ImageSet, batch_size: usize) -> Result<PassStats> {
    let heads = model.num_heads();
    let mut loss = vec![0.0; heads];
    let mut correct = vec![0usize; heads];
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(batch_size) {
        let x = set.batch::<T>(chunk);
        let labels: Vec<Vec<usize>> = chunk.iter().map(|&i| set.labels[i].clone()).collect();
        let logits = model.forward(&x, false)?;
        let (_, per_head, _) = multi_head_loss(&logits, &labels)?;
        for m in 0..heads {
            loss[m] += per_head[m] * chunk.len() as f64;
            correct[m] += count_correct(&logits[m], &labels, m);
        }
    }
    let n = set.len().max(1) as f64;
    Ok(PassStats {
        loss: loss.iter().map(|l| l / n).collect(),
        accuracy: correct.iter().map(|&c| c as f64 / n).collect(),
    })
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[Vec<usize>], m: usize) -> usize {
    (0..logits.batch())
        .filter(|&i| argmax(logits.row(i)) == labels[i][m])
        .count()
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh model and returns it restored to the epoch with the lowest
/// total validation loss.
pub fn train(
    spec: &ModelSpec,
    train_set: &ImageSet,
    val_set: &ImageSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MultiHeadModel<f32>, TrainingLog)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Training("train and validation partitions must be non-empty".into()));
    }
    check_labels(train_set, spec, "train")?;
    check_labels(val_set, spec, "validation")?;

    let mut model = MultiHeadModel::<f32>::new(spec.clone(), config.seed)?;
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed_0f_54_17_u64);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ModelState<f32>)> = None;
    let heads = spec.heads.len();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = vec![0.0; heads];
        let mut correct = vec![0usize; heads];
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // Batch statistics are undefined for a single item.
            if chunk.len() < 2 {
                continue;
            }
            let x = train_set.batch::<f32>(chunk);
            let labels: Vec<Vec<usize>> = chunk.iter().map(|&i| train_set.labels[i].clone()).collect();
            let logits = model.forward(&x, true)?;
            let (total, per_head, grads) = multi_head_loss(&logits, &labels)?;
            if !total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {total} at epoch {epoch} (per head {per_head:?})"
                )));
            }
            for m in 0..heads {
                loss_sum[m] += per_head[m] * chunk.len() as f64;
                correct[m] += count_correct(&logits[m], &labels, m);
            }
            seen += chunk.len();
            model.zero_grad();
            model.backward(grads);
            adam.step(&mut model.params_mut());
        }
        let seen = seen.max(1) as f64;
        let val = evaluate(&mut model, val_set, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum.iter().map(|l| l / seen).collect(),
            val_loss: val.loss,
            train_accuracy: correct.iter().map(|&c| c as f64 / seen).collect(),
            val_accuracy: val.accuracy,
        };
        let val_total = record.val_total();
        if !val_total.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _)| val_total < *b) {
            best = Some((val_total, model.state()));
            log.selected_epoch = epoch;
        }
        on_epoch(&record);
        log.epochs.push(record);
    }
    if let Some((_, state)) = best {
        model.load_state(&state)?;
    }
    Ok((model, log))
}

/// Inference-mode logits for every item, in order: `out[i][m]` is head `m`'s
/// logit vector for item `i`.
pub fn extract_activations<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    set: &ImageSet,
    batch_size: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if set.image_shape != model.spec().input_shape && !set.is_empty() {
        return Err(Error::Input(format!(
            "images are {:?}, model expects {:?}",
            set.image_shape,
            model.spec().input_shape
        )));
    }
    let mut out = Vec::with_capacity(set.len());
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let logits = model.forward(&set.batch::<T>(chunk), false)?;
        for i in 0..chunk.len() {
            out.push(
                logits
                    .iter()
                    .map(|l| l.row(i).iter().map(|v| v.to_f64().unwrap()).collect())
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Serialized trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub train_config: TrainConfig,
    pub selected_epoch: usize,
    pub state: ModelState<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &mut MultiHeadModel<f32>, train_config: TrainConfig, selected_epoch: usize) -> Self {
        Checkpoint {
            spec: model.spec().clone(),
            train_config,
            selected_epoch,
            state: model.state(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).at(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).at(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn into_model(self) -> Result<MultiHeadModel<f32>> {
        let mut model = MultiHeadModel::new(self.spec, 0)?;
        model.load_state(&self.state)?;
        Ok(model)
    }
}
