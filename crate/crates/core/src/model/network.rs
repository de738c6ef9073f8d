//! Backbones, attribute heads and the multi-head model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    BasicBlock, BatchNorm, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool2d, Relu, Sequential,
};
use super::tensor::{Param, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    LeNetLike,
    ResNet18Like,
}

impl BackboneKind {
    /// Default Adam learning rate for this family.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            BackboneKind::LeNetLike => 1e-3,
            BackboneKind::ResNet18Like => 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
}

fn default_feature_dim() -> usize {
    128
}

impl BackboneSpec {
    pub fn new(kind: BackboneKind) -> Self {
        BackboneSpec {
            kind,
            feature_dim: default_feature_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
}

impl HeadSpec {
    pub fn new(output_dim: usize) -> Self {
        HeadSpec {
            hidden_layers: 2,
            hidden_units: 128,
            output_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One feature extractor feeds every head.
    Shared,
    /// An independent extractor and head per attribute.
    Duplicated,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shared" | "s" => Ok(Variant::Shared),
            "duplicated" | "d" => Ok(Variant::Duplicated),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Everything needed to rebuild a model's topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub heads: Vec<HeadSpec>,
    pub variant: Variant,
    /// Input `[channels, height, width]`.
    pub input_shape: [usize; 3],
}

impl ModelSpec {
    pub fn new(backbone: BackboneSpec, known_counts: &[usize], variant: Variant, input_shape: [usize; 3]) -> Self {
        ModelSpec {
            backbone,
            heads: known_counts.iter().map(|&k| HeadSpec::new(k)).collect(),
            variant,
            input_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.heads.is_empty() {
            return Err(Error::Config("model needs at least one head".into()));
        }
        if let Some(h) = self.heads.iter().find(|h| h.output_dim == 0 || h.hidden_units == 0) {
            return Err(Error::Config(format!("invalid head {h:?}")));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Config("input shape must be positive".into()));
        }
        Ok(())
    }
}

fn lenet<T: Scalar>(rng: &mut ChaCha8Rng, input: [usize; 3], feature_dim: usize) -> Result<Sequential<T>> {
    let [c, h, w] = input;
    let shrink = |s: usize| -> Result<usize> {
        let s = s.checked_sub(4).filter(|&s| s >= 2).ok_or_else(too_small)? / 2;
        let s = s.checked_sub(4).filter(|&s| s >= 2).ok_or_else(too_small)? / 2;
        Ok(s)
    };
    let (fh, fw) = (shrink(h)?, shrink(w)?);
    let mut conv1 = Conv2d::new(rng, c, 6, 5, 1, 0, true);
    conv1.propagate_input_grad = false;
    Ok(Sequential::new()
        .push(conv1)
        .push(Relu::default())
        .push(MaxPool2d::new(2, 2, 0))
        .push(Conv2d::new(rng, 6, 16, 5, 1, 0, true))
        .push(Relu::default())
        .push(MaxPool2d::new(2, 2, 0))
        .push(Flatten::default())
        .push(Linear::new(rng, 16 * fh * fw, 120))
        .push(Relu::default())
        .push(Linear::new(rng, 120, 84))
        .push(Relu::default())
        .push(Linear::new(rng, 84, feature_dim)))
}

fn too_small() -> Error {
    Error::Config("input image too small for the backbone".into())
}

fn resnet18<T: Scalar>(rng: &mut ChaCha8Rng, input: [usize; 3], feature_dim: usize) -> Result<Sequential<T>> {
    let [c, h, w] = input;
    if h < 8 || w < 8 {
        return Err(too_small());
    }
    let mut stem = Conv2d::new(rng, c, 64, 7, 2, 3, false);
    stem.propagate_input_grad = false;
    let mut net = Sequential::new()
        .push(stem)
        .push(BatchNorm::new(64))
        .push(Relu::default())
        .push(MaxPool2d::new(3, 2, 1));
    let mut channels = 64;
    for (stage, width) in [64, 128, 256, 512].into_iter().enumerate() {
        let stride = if stage == 0 { 1 } else { 2 };
        net = net
            .push(BasicBlock::new(rng, channels, width, stride))
            .push(BasicBlock::new(rng, width, width, 1));
        channels = width;
    }
    Ok(net
        .push(GlobalAvgPool::default())
        .push(Linear::new(rng, 512, feature_dim)))
}

fn head<T: Scalar>(rng: &mut ChaCha8Rng, in_features: usize, spec: &HeadSpec) -> Sequential<T> {
    let mut net = Sequential::new();
    let mut width = in_features;
    for _ in 0..spec.hidden_layers {
        net = net
            .push(Linear::new(rng, width, spec.hidden_units))
            .push(BatchNorm::new(spec.hidden_units))
            .push(Relu::default());
        width = spec.hidden_units;
    }
    net.push(Linear::new(rng, width, spec.output_dim))
}

/// Feature extractor(s) plus one classification head per attribute.
pub struct MultiHeadModel<T = f32> {
    spec: ModelSpec,
    backbones: Vec<Sequential<T>>,
    heads: Vec<Sequential<T>>,
}

impl<T: Scalar> MultiHeadModel<T> {
    /// Fresh model with parameters drawn from a generator seeded by `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_backbones = match spec.variant {
            Variant::Shared => 1,
            Variant::Duplicated => spec.heads.len(),
        };
        let mut backbones = Vec::with_capacity(n_backbones);
        for _ in 0..n_backbones {
            backbones.push(match spec.backbone.kind {
                BackboneKind::LeNetLike => lenet(&mut rng, spec.input_shape, spec.backbone.feature_dim)?,
                BackboneKind::ResNet18Like => resnet18(&mut rng, spec.input_shape, spec.backbone.feature_dim)?,
            });
        }
        let heads = spec
            .heads
            .iter()
            .map(|h| head(&mut rng, spec.backbone.feature_dim, h))
            .collect();
        Ok(MultiHeadModel { spec, backbones, heads })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Per-head logits `[B, K_m]`.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Vec<Tensor<T>>> {
        let [c, h, w] = self.spec.input_shape;
        if x.shape.len() != 4 || x.shape[1..] != [c, h, w] {
            return Err(Error::Input(format!(
                "expected images of shape [B, {c}, {h}, {w}], got {:?}",
                x.shape
            )));
        }
        match self.spec.variant {
            Variant::Shared => {
                let z = self.backbones[0].forward(x.clone(), train)?;
                self.heads.iter_mut().map(|h| h.forward(z.clone(), train)).collect()
            }
            Variant::Duplicated => self
                .backbones
                .iter_mut()
                .zip(&mut self.heads)
                .map(|(b, h)| {
                    let z = b.forward(x.clone(), train)?;
                    h.forward(z, train)
                })
                .collect(),
        }
    }

    /// Backpropagates per-head logit gradients from the last training
    /// forward pass into the parameter gradients.
    pub fn backward(&mut self, grads: Vec<Tensor<T>>) {
        assert_eq!(grads.len(), self.heads.len(), "one gradient per head");
        match self.spec.variant {
            Variant::Shared => {
                let mut total: Option<Tensor<T>> = None;
                for (h, g) in self.heads.iter_mut().zip(grads) {
                    let dz = h.backward(g);
                    total = Some(match total {
                        None => dz,
                        Some(mut t) => {
                            for (a, &b) in t.data.iter_mut().zip(&dz.data) {
                                *a = *a + b;
                            }
                            t
                        }
                    });
                }
                if let Some(t) = total {
                    self.backbones[0].backward(t);
                }
            }
            Variant::Duplicated => {
                for ((b, h), g) in self.backbones.iter_mut().zip(&mut self.heads).zip(grads) {
                    let dz = h.backward(g);
                    b.backward(dz);
                }
            }
        }
    }

    /// All trainable parameters, backbones first, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.backbones.iter_mut().flat_map(|b| b.params_mut()).collect();
        out.extend(self.heads.iter_mut().flat_map(|h| h.params_mut()));
        out
    }

    /// Parameters belonging to backbone+head pair `m` (duplicated variant)
    /// or to head `m` alone (shared variant).
    pub fn params_of_pair_mut(&mut self, m: usize) -> Vec<&mut Param<T>> {
        let mut out = match self.spec.variant {
            Variant::Duplicated => self.backbones[m].params_mut(),
            Variant::Shared => Vec::new(),
        };
        out.extend(self.heads[m].params_mut());
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = self.backbones.iter_mut().flat_map(|b| b.buffers_mut()).collect();
        out.extend(self.heads.iter_mut().flat_map(|h| h.buffers_mut()));
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_parameters(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Copies of all parameter values and buffers.
    pub fn state(&mut self) -> ModelState<T> {
        ModelState {
            params: self.params_mut().iter().map(|p| p.value.clone()).collect(),
            buffers: self.buffers_mut().iter().map(|b| (*b).clone()).collect(),
        }
    }

    pub fn load_state(&mut self, state: &ModelState<T>) -> Result<()> {
        let shape_err = || Error::Config("saved state does not match the model topology".into());
        let mut params = self.params_mut();
        if params.len() != state.params.len() {
            return Err(shape_err());
        }
        for (p, v) in params.iter_mut().zip(&state.params) {
            if p.value.len() != v.len() {
                return Err(shape_err());
            }
            p.value.copy_from_slice(v);
        }
        let mut buffers = self.buffers_mut();
        if buffers.len() != state.buffers.len() {
            return Err(shape_err());
        }
        for (b, v) in buffers.iter_mut().zip(&state.buffers) {
            if b.len() != v.len() {
                return Err(shape_err());
            }
            b.copy_from_slice(v);
        }
        Ok(())
    }
}

/// Flat snapshot of a model's parameters and running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelState<T> {
    pub params: Vec<Vec<T>>,
    pub buffers: Vec<Vec<T>>,
}
