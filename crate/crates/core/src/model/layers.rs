//! Network layers with explicit forward and backward passes.
//!
//! Every layer caches what its backward pass needs during a training-mode
//! forward call. Image tensors use the `[batch, channels, height, width]`
//! layout, feature tensors `[batch, features]`.

use rand::Rng;

use super::tensor::{gemm, Param, Scalar, Tensor};
use crate::error::{Error, Result};

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: Tensor<T>, train: bool) -> Result<Tensor<T>>;

    /// Consumes the gradient w.r.t. the last training-mode output, accumulates
    /// parameter gradients and returns the gradient w.r.t. the input.
    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-trainable state (batch-norm running statistics).
    fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        Vec::new()
    }
}

fn uniform_init<T: Scalar, R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect()
}

fn expect_rank<T>(x: &Tensor<T>, rank: usize, layer: &str) -> Result<()> {
    if x.shape.len() != rank {
        return Err(Error::Input(format!(
            "{layer} expects a rank-{rank} input, got shape {:?}",
            x.shape
        )));
    }
    Ok(())
}

pub struct Conv2d<T> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    weight: Param<T>,
    bias: Option<Param<T>>,
    /// Skip the input gradient (first layer of a network).
    pub propagate_input_grad: bool,
    cols: Vec<T>,
    input_shape: Vec<usize>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(uniform_init(rng, out_channels * fan_in, fan_in));
        let bias = bias.then(|| Param::new(uniform_init(rng, out_channels, fan_in)));
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
            propagate_input_grad: true,
            cols: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let pix = oh * ow;
        let width = b * pix;
        let mut cols = vec![T::zero(); c * k * k * width];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let dst = &mut cols[row * width..(row + 1) * width];
                    for n in 0..b {
                        let plane = &x.data[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let out = &mut dst[n * pix + oy * ow..n * pix + (oy + 1) * ow];
                            for (ox, o) in out.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    *o = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], oh: usize, ow: usize) -> Tensor<T> {
        let (b, c, h, w) = (
            self.input_shape[0],
            self.input_shape[1],
            self.input_shape[2],
            self.input_shape[3],
        );
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let pix = oh * ow;
        let width = b * pix;
        let mut dx = Tensor::zeros(self.input_shape.clone());
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src = &cols[row * width..(row + 1) * width];
                    for n in 0..b {
                        let plane = &mut dx.data[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            let g = &src[n * pix + oy * ow..n * pix + (oy + 1) * ow];
                            for (ox, &gv) in g.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] = dst[ix as usize] + gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        expect_rank(&x, 4, "conv2d")?;
        if x.shape[1] != self.in_channels {
            return Err(Error::Input(format!(
                "conv2d expects {} channels, got {}",
                self.in_channels, x.shape[1]
            )));
        }
        if x.shape[2] + 2 * self.padding < self.kernel || x.shape[3] + 2 * self.padding < self.kernel {
            return Err(Error::Input(format!("input {:?} smaller than the kernel", x.shape)));
        }
        let b = x.shape[0];
        let (oh, ow) = (self.output_size(x.shape[2]), self.output_size(x.shape[3]));
        let pix = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let cols = self.im2col(&x, oh, ow);
        let mut tmp = vec![T::zero(); self.out_channels * b * pix];
        gemm(
            false,
            false,
            self.out_channels,
            b * pix,
            kdim,
            T::one(),
            &self.weight.value,
            &cols,
            T::zero(),
            &mut tmp,
        );
        let mut out = Tensor::zeros(vec![b, self.out_channels, oh, ow]);
        for co in 0..self.out_channels {
            let bias = self.bias.as_ref().map_or(T::zero(), |p| p.value[co]);
            let src = &tmp[co * b * pix..(co + 1) * b * pix];
            for n in 0..b {
                let dst = &mut out.data[(n * self.out_channels + co) * pix..][..pix];
                for (d, &v) in dst.iter_mut().zip(&src[n * pix..(n + 1) * pix]) {
                    *d = v + bias;
                }
            }
        }
        if train {
            self.cols = cols;
            self.input_shape = x.shape;
        }
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let b = grad.shape[0];
        let (oh, ow) = (grad.shape[2], grad.shape[3]);
        let pix = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let mut g = vec![T::zero(); self.out_channels * b * pix];
        for co in 0..self.out_channels {
            let dst = &mut g[co * b * pix..(co + 1) * b * pix];
            for n in 0..b {
                dst[n * pix..(n + 1) * pix]
                    .copy_from_slice(&grad.data[(n * self.out_channels + co) * pix..][..pix]);
            }
            if let Some(bias) = self.bias.as_mut() {
                bias.grad[co] = dst.iter().fold(bias.grad[co], |acc, &v| acc + v);
            }
        }
        gemm(
            false,
            true,
            self.out_channels,
            kdim,
            b * pix,
            T::one(),
            &g,
            &self.cols,
            T::one(),
            &mut self.weight.grad,
        );
        if !self.propagate_input_grad {
            self.cols = Vec::new();
            return Tensor::zeros(self.input_shape.clone());
        }
        let mut dcols = std::mem::take(&mut self.cols);
        gemm(
            true,
            false,
            kdim,
            b * pix,
            self.out_channels,
            T::one(),
            &self.weight.value,
            &g,
            T::zero(),
            &mut dcols,
        );
        self.col2im(&dcols, oh, ow)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.weight];
        if let Some(b) = self.bias.as_mut() {
            out.push(b);
        }
        out
    }
}

pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            argmax: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        expect_rank(&x, 4, "max-pool")?;
        let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Input(format!("input {:?} smaller than the pool window", x.shape)));
        }
        let (oh, ow) = (self.output_size(h), self.output_size(w));
        let mut out = Tensor::zeros(vec![b, c, oh, ow]);
        let mut argmax = vec![0usize; out.data.len()];
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = base;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        if train {
            self.argmax = argmax;
            self.input_shape = x.shape;
        }
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(self.input_shape.clone());
        for (&idx, &g) in self.argmax.iter().zip(&grad.data) {
            dx.data[idx] = dx.data[idx] + g;
        }
        dx
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, mut x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if train {
            self.mask = x.data.iter().map(|&v| v > T::zero()).collect();
        }
        for v in &mut x.data {
            if !(*v > T::zero()) {
                *v = T::zero();
            }
        }
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        for (g, &keep) in grad.data.iter_mut().zip(&self.mask) {
            if !keep {
                *g = T::zero();
            }
        }
        grad
    }
}

pub struct Linear<T> {
    in_features: usize,
    out_features: usize,
    weight: Param<T>,
    bias: Param<T>,
    input: Vec<T>,
    batch: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::new(uniform_init(rng, in_features * out_features, in_features)),
            bias: Param::new(uniform_init(rng, out_features, in_features)),
            input: Vec::new(),
            batch: 0,
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if x.shape.len() < 2 || x.item_len() != self.in_features {
            return Err(Error::Input(format!(
                "linear layer expects {} features, got shape {:?}",
                self.in_features, x.shape
            )));
        }
        let b = x.batch();
        let mut out = Tensor::zeros(vec![b, self.out_features]);
        for row in out.data.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            false,
            true,
            b,
            self.out_features,
            self.in_features,
            T::one(),
            &x.data,
            &self.weight.value,
            T::one(),
            &mut out.data,
        );
        if train {
            self.input = x.data;
            self.batch = b;
        }
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let b = self.batch;
        gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            b,
            T::one(),
            &grad.data,
            &self.input,
            T::one(),
            &mut self.weight.grad,
        );
        for row in grad.data.chunks(self.out_features) {
            for (g, &v) in self.bias.grad.iter_mut().zip(row) {
                *g = *g + v;
            }
        }
        let mut dx = Tensor::zeros(vec![b, self.in_features]);
        gemm(
            false,
            false,
            b,
            self.in_features,
            self.out_features,
            T::one(),
            &grad.data,
            &self.weight.value,
            T::zero(),
            &mut dx.data,
        );
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Batch normalization over axis 1; works for `[B, C]` and `[B, C, H, W]`.
pub struct BatchNorm<T> {
    channels: usize,
    eps: f64,
    momentum: f64,
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::new(vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            x_hat: Vec::new(),
            inv_std: Vec::new(),
            shape: Vec::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, mut x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if x.shape.len() < 2 || x.shape[1] != self.channels {
            return Err(Error::Input(format!(
                "batch norm expects {} channels, got shape {:?}",
                self.channels, x.shape
            )));
        }
        let b = x.shape[0];
        let spatial: usize = x.shape[2..].iter().product();
        let c = self.channels;
        let count = b * spatial;
        if train && count < 2 {
            return Err(Error::Input("batch norm needs more than one value per channel in training".into()));
        }
        let plane = |n: usize, ch: usize| (n * c + ch) * spatial..(n * c + ch + 1) * spatial;
        if train {
            let mut inv_std = Vec::with_capacity(c);
            for ch in 0..c {
                let mut sum = 0.0f64;
                for n in 0..b {
                    sum += x.data[plane(n, ch)].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for n in 0..b {
                    sq += x.data[plane(n, ch)]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = sq / (count - 1) as f64;
                let m = self.momentum;
                self.running_mean[ch] =
                    T::lit((1.0 - m) * self.running_mean[ch].to_f64().unwrap() + m * mean);
                self.running_var[ch] =
                    T::lit((1.0 - m) * self.running_var[ch].to_f64().unwrap() + m * unbiased);
                let istd = 1.0 / (var + self.eps).sqrt();
                let istd_t = T::lit(istd);
                inv_std.push(istd_t);
                let mean_t = T::lit(mean);
                for n in 0..b {
                    for v in &mut x.data[plane(n, ch)] {
                        *v = (*v - mean_t) * istd_t;
                    }
                }
            }
            self.x_hat = x.data.clone();
            self.inv_std = inv_std;
            self.shape = x.shape.clone();
            for n in 0..b {
                for ch in 0..c {
                    let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                    for v in &mut x.data[plane(n, ch)] {
                        *v = *v * g + bt;
                    }
                }
            }
        } else {
            for ch in 0..c {
                let istd = T::lit(1.0 / (self.running_var[ch].to_f64().unwrap() + self.eps).sqrt());
                let (mean, g, bt) = (self.running_mean[ch], self.gamma.value[ch], self.beta.value[ch]);
                for n in 0..b {
                    for v in &mut x.data[plane(n, ch)] {
                        *v = (*v - mean) * istd * g + bt;
                    }
                }
            }
        }
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        let b = self.shape[0];
        let spatial: usize = self.shape[2..].iter().product();
        let c = self.channels;
        let count = T::lit((b * spatial) as f64);
        let plane = |n: usize, ch: usize| (n * c + ch) * spatial..(n * c + ch + 1) * spatial;
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for n in 0..b {
                let r = plane(n, ch);
                for (&dy, &xh) in grad.data[r.clone()].iter().zip(&self.x_hat[r]) {
                    sum_dy = sum_dy + dy;
                    sum_dy_xhat = sum_dy_xhat + dy * xh;
                }
            }
            self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xhat;
            self.beta.grad[ch] = self.beta.grad[ch] + sum_dy;
            let scale = self.gamma.value[ch] * self.inv_std[ch] / count;
            for n in 0..b {
                let r = plane(n, ch);
                for (dy, &xh) in grad.data[r.clone()].iter_mut().zip(&self.x_hat[r]) {
                    *dy = scale * (count * *dy - sum_dy - xh * sum_dy_xhat);
                }
            }
        }
        grad
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Default)]
pub struct Flatten {
    shape: Vec<usize>,
}

impl<T: Scalar> Layer<T> for Flatten {
    fn forward(&mut self, mut x: Tensor<T>, _train: bool) -> Result<Tensor<T>> {
        self.shape = x.shape.clone();
        x.shape = vec![x.shape[0], x.item_len()];
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        grad.shape = self.shape.clone();
        grad
    }
}

/// Mean over the spatial axes: `[B, C, H, W] -> [B, C]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    shape: Vec<usize>,
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: Tensor<T>, _train: bool) -> Result<Tensor<T>> {
        expect_rank(&x, 4, "global average pool")?;
        let spatial = x.shape[2] * x.shape[3];
        let inv = T::lit(1.0 / spatial as f64);
        let data = x
            .data
            .chunks(spatial)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        self.shape = x.shape.clone();
        Ok(Tensor::new(vec![x.shape[0], x.shape[1]], data))
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let spatial = self.shape[2] * self.shape[3];
        let inv = T::lit(1.0 / spatial as f64);
        let data = grad
            .data
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, spatial))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

/// Residual block: two 3x3 convolutions with batch norm, plus an identity or
/// projected shortcut.
pub struct BasicBlock<T> {
    main: Sequential<T>,
    shortcut: Option<Sequential<T>>,
    relu: Relu,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let main = Sequential::new()
            .push(Conv2d::new(rng, in_channels, out_channels, 3, stride, 1, false))
            .push(BatchNorm::new(out_channels))
            .push(Relu::default())
            .push(Conv2d::new(rng, out_channels, out_channels, 3, 1, 1, false))
            .push(BatchNorm::new(out_channels));
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            Sequential::new()
                .push(Conv2d::new(rng, in_channels, out_channels, 1, stride, 0, false))
                .push(BatchNorm::new(out_channels))
        });
        BasicBlock {
            main,
            shortcut,
            relu: Relu::default(),
        }
    }
}

impl<T: Scalar> Layer<T> for BasicBlock<T> {
    fn forward(&mut self, x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let skip = match self.shortcut.as_mut() {
            Some(s) => s.forward(x.clone(), train)?,
            None => x.clone(),
        };
        let mut y = self.main.forward(x, train)?;
        if y.shape != skip.shape {
            return Err(Error::Input(format!(
                "residual shapes differ: {:?} vs {:?}",
                y.shape, skip.shape
            )));
        }
        for (a, &b) in y.data.iter_mut().zip(&skip.data) {
            *a = *a + b;
        }
        self.relu.forward(y, train)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let g = Layer::<T>::backward(&mut self.relu, grad);
        let skip = match self.shortcut.as_mut() {
            Some(s) => s.backward(g.clone()),
            None => g.clone(),
        };
        let mut dx = self.main.backward(g);
        for (a, &b) in dx.data.iter_mut().zip(&skip.data) {
            *a = *a + b;
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.main.params_mut();
        if let Some(s) = self.shortcut.as_mut() {
            out.extend(s.params_mut());
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = self.main.buffers_mut();
        if let Some(s) = self.shortcut.as_mut() {
            out.extend(s.buffers_mut());
        }
        out
    }
}

pub struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn push(mut self, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, mut x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        for layer in &mut self.layers {
            x = layer.forward(x, train)?;
        }
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor<T>) -> Tensor<T> {
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(grad);
        }
        grad
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(w * layer(x)))/dx and /dparams.
    fn check_layer(layer: &mut dyn Layer<f64>, shape: Vec<usize>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = layer.forward(x.clone(), true).unwrap();
        let w: Vec<f64> = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> f64 {
            let y = layer.forward(x.clone(), true).unwrap();
            y.data.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        for p in layer.params_mut() {
            p.zero_grad();
        }
        layer.forward(x.clone(), true).unwrap();
        let dx = layer.backward(Tensor::new(y.shape.clone(), w.clone()));
        let analytic_params: Vec<Vec<f64>> = layer.params_mut().iter().map(|p| p.grad.clone()).collect();

        let eps = 1e-6;
        for i in (0..n).step_by(1 + n / 17) {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let num = (objective(layer, &xp) - objective(layer, &xm)) / (2.0 * eps);
            assert!((num - dx.data[i]).abs() < 1e-5 * (1.0 + num.abs()), "dx[{i}] {num} vs {}", dx.data[i]);
        }
        for (pi, analytic) in analytic_params.iter().enumerate() {
            for j in (0..analytic.len()).step_by(1 + analytic.len() / 11) {
                let orig = layer.params_mut()[pi].value[j];
                layer.params_mut()[pi].value[j] = orig + eps;
                let plus = objective(layer, &x);
                layer.params_mut()[pi].value[j] = orig - eps;
                let minus = objective(layer, &x);
                layer.params_mut()[pi].value[j] = orig;
                let num = (plus - minus) / (2.0 * eps);
                assert!(
                    (num - analytic[j]).abs() < 1e-5 * (1.0 + num.abs()),
                    "param {pi}[{j}] {num} vs {}",
                    analytic[j]
                );
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check_layer(&mut Conv2d::new(&mut rng, 2, 3, 3, 1, 1, true), vec![2, 2, 5, 5], 2);
        check_layer(&mut Conv2d::new(&mut rng, 2, 4, 3, 2, 1, false), vec![2, 2, 6, 7], 3);
        check_layer(&mut Conv2d::new(&mut rng, 3, 2, 5, 1, 0, true), vec![1, 3, 7, 7], 4);
    }

    #[test]
    fn linear_batchnorm_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check_layer(&mut Linear::new(&mut rng, 6, 4), vec![3, 6], 6);
        check_layer(&mut BatchNorm::new(4), vec![5, 4], 7);
        check_layer(&mut BatchNorm::new(3), vec![2, 3, 3, 3], 8);
        check_layer(&mut MaxPool2d::new(2, 2, 0), vec![2, 2, 4, 4], 9);
        check_layer(&mut MaxPool2d::new(3, 2, 1), vec![1, 2, 5, 5], 10);
        check_layer(&mut GlobalAvgPool::default(), vec![2, 3, 2, 2], 11);
    }

    #[test]
    fn residual_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        check_layer(&mut BasicBlock::new(&mut rng, 2, 2, 1), vec![2, 2, 4, 4], 13);
        check_layer(&mut BasicBlock::new(&mut rng, 2, 3, 2), vec![2, 2, 4, 4], 14);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut conv = Conv2d::<f64>::new(&mut rng, 2, 3, 3, 2, 1, true);
        let x = Tensor::new(vec![1, 2, 5, 5], (0..50).map(|i| (i as f64 * 0.3).sin()).collect());
        let y = conv.forward(x.clone(), false).unwrap();
        assert_eq!(y.shape, vec![1, 3, 3, 3]);
        let w = conv.weight.value.clone();
        let b = conv.bias.as_ref().unwrap().value.clone();
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x.data[ci * 25 + iy as usize * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((acc - y.data[(co * 3 + oy) * 3 + ox]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_statistics() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        bn.forward(x.clone(), true).unwrap();
        // running mean 0.9*0 + 0.1*2.5, running var 0.9*1 + 0.1*(5/3)
        let y = bn.forward(Tensor::new(vec![1, 1], vec![1.0]), false).unwrap();
        let var = 0.9 + 0.1 * 5.0 / 3.0;
        assert!((y.data[0] - 0.75 / (var + 1e-5f64).sqrt()).abs() < 1e-12);
    }
}
