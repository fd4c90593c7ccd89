//! Layer kinds and their analytic forward/backward kernels.
//!
//! Batches are row-major with the sample index first: `[B, features]` for
//! vector layers and `[B, H, W, C]` for image layers.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

use super::model::Parameter;

pub const CONV_KERNEL: usize = 4;
const POOL: usize = 2;
/// Samples per im2col block, bounds the scratch buffer for conv layers.
const CONV_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Affine map to `units` outputs. Activations are separate layers.
    Dense(usize),
    Relu,
    Sigmoid,
    /// Gated layer `T(x)·D(x) + (1 − T(x))·x` of width `units`, with a ReLU
    /// transform `D` and a sigmoid gate `T`.
    Highway(usize),
    /// 4×4 convolution to `channels` outputs, valid padding, stride 1.
    Conv2d(usize),
    /// 2×2 max-pooling with stride 2 (odd trailing rows/columns dropped).
    MaxPool2,
    Flatten,
    /// Linear class-score layer; the softmax lives in the loss.
    SoftmaxOutput(usize),
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense(_)
                | LayerSpec::Highway(_)
                | LayerSpec::Conv2d(_)
                | LayerSpec::SoftmaxOutput(_)
        )
    }

    /// Per-sample output shape, or a message explaining why `input` is not
    /// accepted.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match (*self, input) {
            (LayerSpec::Dense(u) | LayerSpec::SoftmaxOutput(u), [_]) if u > 0 => Ok(vec![u]),
            (LayerSpec::Dense(_) | LayerSpec::SoftmaxOutput(_), [_]) => Err("zero units".into()),
            (LayerSpec::Relu | LayerSpec::Sigmoid, _) => Ok(input.to_vec()),
            (LayerSpec::Highway(u), [w]) if u == *w => Ok(vec![u]),
            (LayerSpec::Highway(u), [w]) => {
                Err(format!("highway width {u} does not match input width {w}"))
            }
            (LayerSpec::Conv2d(c), [h, w, _])
                if *h >= CONV_KERNEL && *w >= CONV_KERNEL && c > 0 =>
            {
                Ok(vec![h - CONV_KERNEL + 1, w - CONV_KERNEL + 1, c])
            }
            (LayerSpec::Conv2d(_), [_, _, _]) => {
                Err(format!("input {input:?} smaller than the 4x4 kernel"))
            }
            (LayerSpec::MaxPool2, [h, w, c]) if *h >= POOL && *w >= POOL => {
                Ok(vec![h / POOL, w / POOL, *c])
            }
            (LayerSpec::MaxPool2, [_, _, _]) => {
                Err(format!("input {input:?} smaller than the 2x2 window"))
            }
            (LayerSpec::Flatten, _) => Ok(vec![input.iter().product()]),
            (spec, _) => Err(format!(
                "{spec} cannot take per-sample input of shape {input:?}"
            )),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense(u) => write!(f, "dense {u}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Sigmoid => write!(f, "sigmoid"),
            LayerSpec::Highway(u) => write!(f, "highway {u}"),
            LayerSpec::Conv2d(c) => write!(f, "conv {c}"),
            LayerSpec::MaxPool2 => write!(f, "maxpool"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::SoftmaxOutput(c) => write!(f, "output {c}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// Parses the `Display` form, e.g. `dense 64`, `relu`, `conv 32`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts
            .next()
            .ok_or_else(|| Error::Config("empty layer".into()))?;
        let arg = parts
            .next()
            .map(|a| {
                a.parse::<usize>()
                    .map_err(|_| Error::Config(format!("layer `{s}`: `{a}` is not a size")))
            })
            .transpose()?;
        if parts.next().is_some() {
            return Err(Error::Config(format!("layer `{s}`: too many fields")));
        }
        let sized = |make: fn(usize) -> LayerSpec| {
            arg.map(make)
                .ok_or_else(|| Error::Config(format!("layer `{s}` needs a size")))
        };
        let bare = |spec: LayerSpec| match arg {
            None => Ok(spec),
            Some(_) => Err(Error::Config(format!("layer `{s}` takes no size"))),
        };
        match kind.to_ascii_lowercase().as_str() {
            "dense" => sized(LayerSpec::Dense),
            "highway" => sized(LayerSpec::Highway),
            "conv" | "conv2d" => sized(LayerSpec::Conv2d),
            "output" | "softmax" => sized(LayerSpec::SoftmaxOutput),
            "relu" => bare(LayerSpec::Relu),
            "sigmoid" => bare(LayerSpec::Sigmoid),
            "maxpool" | "maxpool2" => bare(LayerSpec::MaxPool2),
            "flatten" => bare(LayerSpec::Flatten),
            other => Err(Error::Config(format!("unknown layer kind `{other}`"))),
        }
    }
}

/// A layer with its resolved per-sample shapes and parameter slots.
#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: Range<usize>,
}

/// Per-layer values kept from the forward pass, beyond the layer input.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    None,
    Sigmoid {
        out: Tensor,
    },
    Highway {
        pre_d: Tensor,
        d: Tensor,
        gate: Tensor,
    },
    MaxPool {
        argmax: Vec<usize>,
    },
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn affine(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows * n];
    for row in out.chunks_exact_mut(n) {
        row.copy_from_slice(b.data());
    }
    gemm(rows, k, n, x, (k, 1), w.data(), (n, 1), &mut out, 1.0);
    out
}

/// Writes `xᵀ·dz` into `w.grad` and the column sums of `dz` into `b.grad`.
fn affine_param_grads(x: &[f64], dz: &[f64], rows: usize, w: &mut Parameter, b: &mut Parameter) {
    let (k, n) = (w.value().shape()[0], w.value().shape()[1]);
    gemm(k, rows, n, x, (1, k), dz, (n, 1), w.grad_data_mut(), 0.0);
    let db = b.grad_data_mut();
    db.fill(0.0);
    for row in dz.chunks_exact(n) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
}

/// `dz · wᵀ`, accumulated into `dx` when `accumulate` is set.
fn affine_input_grad(dz: &[f64], rows: usize, w: &Tensor, dx: &mut [f64], accumulate: bool) {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    gemm(
        rows,
        n,
        k,
        dz,
        (n, 1),
        w.data(),
        (1, n),
        dx,
        if accumulate { 1.0 } else { 0.0 },
    );
}

impl Layer {
    fn batch_shape(batch: usize, per_sample: &[usize]) -> Vec<usize> {
        let mut s = Vec::with_capacity(per_sample.len() + 1);
        s.push(batch);
        s.extend_from_slice(per_sample);
        s
    }

    pub fn forward(&self, params: &[Parameter], x: &Tensor) -> Result<(Tensor, LayerCache)> {
        let batch = x.shape()[0];
        let out_shape = Self::batch_shape(batch, &self.output);
        let xd = x.data();
        match self.spec {
            LayerSpec::Dense(_) | LayerSpec::SoftmaxOutput(_) => {
                let out = affine(xd, batch, params[0].value(), params[1].value());
                Ok((Tensor::from_parts(out_shape, out), LayerCache::None))
            }
            LayerSpec::Relu => Ok((x.map(|v| v.max(0.0)), LayerCache::None)),
            LayerSpec::Sigmoid => {
                let out = x.map(sigmoid);
                Ok((out.clone(), LayerCache::Sigmoid { out }))
            }
            LayerSpec::Highway(_) => {
                let pre_d = affine(xd, batch, params[0].value(), params[1].value());
                let mut gate = affine(xd, batch, params[2].value(), params[3].value());
                gate.iter_mut().for_each(|z| *z = sigmoid(*z));
                let d: Vec<f64> = pre_d.iter().map(|v| v.max(0.0)).collect();
                let y = d
                    .iter()
                    .zip(&gate)
                    .zip(xd)
                    .map(|((&dv, &t), &xv)| t * dv + (1.0 - t) * xv)
                    .collect();
                let cache = LayerCache::Highway {
                    pre_d: Tensor::from_parts(out_shape.clone(), pre_d),
                    d: Tensor::from_parts(out_shape.clone(), d),
                    gate: Tensor::from_parts(out_shape.clone(), gate),
                };
                Ok((Tensor::from_parts(out_shape, y), cache))
            }
            LayerSpec::Conv2d(_) => {
                let out = self.conv_forward(params, xd, batch);
                Ok((Tensor::from_parts(out_shape, out), LayerCache::None))
            }
            LayerSpec::MaxPool2 => {
                let (out, argmax) = self.pool_forward(xd, batch);
                Ok((
                    Tensor::from_parts(out_shape, out),
                    LayerCache::MaxPool { argmax },
                ))
            }
            LayerSpec::Flatten => Ok((x.clone().reshape(&out_shape)?, LayerCache::None)),
        }
    }

    /// Fills parameter gradients and, when `need_input_grad`, returns dL/dx.
    pub fn backward(
        &self,
        params: &mut [Parameter],
        x: &Tensor,
        cache: &LayerCache,
        dy: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let batch = x.shape()[0];
        let in_shape = x.shape().to_vec();
        let xd = x.data();
        let dyd = dy.data();
        match (self.spec, cache) {
            (LayerSpec::Dense(_) | LayerSpec::SoftmaxOutput(_), _) => {
                let (w, b) = params.split_at_mut(1);
                affine_param_grads(xd, dyd, batch, &mut w[0], &mut b[0]);
                Ok(need_input_grad.then(|| {
                    let mut dx = vec![0.0; x.len()];
                    affine_input_grad(dyd, batch, w[0].value(), &mut dx, false);
                    Tensor::from_parts(in_shape, dx)
                }))
            }
            (LayerSpec::Relu, _) => {
                let dx = xd
                    .iter()
                    .zip(dyd)
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                Ok(Some(Tensor::from_parts(in_shape, dx)))
            }
            (LayerSpec::Sigmoid, LayerCache::Sigmoid { out }) => {
                let dx = out
                    .data()
                    .iter()
                    .zip(dyd)
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                Ok(Some(Tensor::from_parts(in_shape, dx)))
            }
            (LayerSpec::Highway(_), LayerCache::Highway { pre_d, d, gate }) => {
                let n = gate.len();
                let mut dz_d = vec![0.0; n];
                let mut dz_t = vec![0.0; n];
                for i in 0..n {
                    let t = gate.data()[i];
                    let g = dyd[i];
                    dz_d[i] = if pre_d.data()[i] > 0.0 { g * t } else { 0.0 };
                    dz_t[i] = g * (d.data()[i] - xd[i]) * t * (1.0 - t);
                }
                let (d_params, t_params) = params.split_at_mut(2);
                {
                    let (w, b) = d_params.split_at_mut(1);
                    affine_param_grads(xd, &dz_d, batch, &mut w[0], &mut b[0]);
                }
                {
                    let (w, b) = t_params.split_at_mut(1);
                    affine_param_grads(xd, &dz_t, batch, &mut w[0], &mut b[0]);
                }
                Ok(need_input_grad.then(|| {
                    let mut dx: Vec<f64> = gate
                        .data()
                        .iter()
                        .zip(dyd)
                        .map(|(&t, &g)| g * (1.0 - t))
                        .collect();
                    affine_input_grad(&dz_d, batch, d_params[0].value(), &mut dx, true);
                    affine_input_grad(&dz_t, batch, t_params[0].value(), &mut dx, true);
                    Tensor::from_parts(in_shape, dx)
                }))
            }
            (LayerSpec::Conv2d(_), _) => {
                let dx = self.conv_backward(params, xd, dyd, batch, need_input_grad);
                Ok(dx.map(|dx| Tensor::from_parts(in_shape, dx)))
            }
            (LayerSpec::MaxPool2, LayerCache::MaxPool { argmax }) => {
                let mut dx = vec![0.0; x.len()];
                for (&src, &g) in argmax.iter().zip(dyd) {
                    dx[src] += g;
                }
                Ok(Some(Tensor::from_parts(in_shape, dx)))
            }
            (LayerSpec::Flatten, _) => Ok(Some(dy.clone().reshape(&in_shape)?)),
            (spec, _) => Err(Error::Contract(format!(
                "cache entry does not belong to a {spec} layer"
            ))),
        }
    }

    fn conv_dims(&self) -> (usize, usize, usize, usize, usize, usize) {
        let (h, w, cin) = (self.input[0], self.input[1], self.input[2]);
        let (ho, wo, cout) = (self.output[0], self.output[1], self.output[2]);
        (h, w, cin, ho, wo, cout)
    }

    /// Unfolds `samples` images starting at `first` into rows of 4×4×cin patches.
    fn im2col(&self, x: &[f64], first: usize, samples: usize, cols: &mut [f64]) {
        let (h, w, cin, ho, wo, _) = self.conv_dims();
        let patch = CONV_KERNEL * CONV_KERNEL * cin;
        let mut row = 0;
        for s in first..first + samples {
            let img = &x[s * h * w * cin..(s + 1) * h * w * cin];
            for oy in 0..ho {
                for ox in 0..wo {
                    let dst = &mut cols[row * patch..(row + 1) * patch];
                    for ky in 0..CONV_KERNEL {
                        let src = ((oy + ky) * w + ox) * cin;
                        let len = CONV_KERNEL * cin;
                        dst[ky * len..(ky + 1) * len].copy_from_slice(&img[src..src + len]);
                    }
                    row += 1;
                }
            }
        }
    }

    fn conv_forward(&self, params: &[Parameter], x: &[f64], batch: usize) -> Vec<f64> {
        let (_, _, cin, ho, wo, cout) = self.conv_dims();
        let patch = CONV_KERNEL * CONV_KERNEL * cin;
        let per_sample = ho * wo;
        let kernel = params[0].value().data();
        let bias = params[1].value().data();
        let mut out = vec![0.0; batch * per_sample * cout];
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(bias);
        }
        let mut cols = vec![0.0; CONV_CHUNK.min(batch) * per_sample * patch];
        for first in (0..batch).step_by(CONV_CHUNK) {
            let samples = CONV_CHUNK.min(batch - first);
            let rows = samples * per_sample;
            self.im2col(x, first, samples, &mut cols);
            let dst = &mut out[first * per_sample * cout..(first + samples) * per_sample * cout];
            gemm(
                rows,
                patch,
                cout,
                &cols,
                (patch, 1),
                kernel,
                (cout, 1),
                dst,
                1.0,
            );
        }
        out
    }

    fn conv_backward(
        &self,
        params: &mut [Parameter],
        x: &[f64],
        dy: &[f64],
        batch: usize,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (h, w, cin, ho, wo, cout) = self.conv_dims();
        let patch = CONV_KERNEL * CONV_KERNEL * cin;
        let per_sample = ho * wo;
        let (k_param, b_param) = params.split_at_mut(1);

        let db = b_param[0].grad_data_mut();
        db.fill(0.0);
        for row in dy.chunks_exact(cout) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        k_param[0].grad_data_mut().fill(0.0);

        let mut dx = need_input_grad.then(|| vec![0.0; x.len()]);
        let mut cols = vec![0.0; CONV_CHUNK.min(batch) * per_sample * patch];
        for first in (0..batch).step_by(CONV_CHUNK) {
            let samples = CONV_CHUNK.min(batch - first);
            let rows = samples * per_sample;
            let dy_chunk = &dy[first * per_sample * cout..(first + samples) * per_sample * cout];
            self.im2col(x, first, samples, &mut cols);
            gemm(
                patch,
                rows,
                cout,
                &cols,
                (1, patch),
                dy_chunk,
                (cout, 1),
                k_param[0].grad_data_mut(),
                1.0,
            );
            if let Some(dx) = dx.as_mut() {
                let kernel = k_param[0].value().data();
                gemm(
                    rows,
                    cout,
                    patch,
                    dy_chunk,
                    (cout, 1),
                    kernel,
                    (1, cout),
                    &mut cols,
                    0.0,
                );
                // col2im: scatter-add each patch row back onto its image.
                let mut row = 0;
                for s in first..first + samples {
                    let img = &mut dx[s * h * w * cin..(s + 1) * h * w * cin];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let src = &cols[row * patch..(row + 1) * patch];
                            for ky in 0..CONV_KERNEL {
                                let base = ((oy + ky) * w + ox) * cin;
                                let len = CONV_KERNEL * cin;
                                for (d, v) in img[base..base + len]
                                    .iter_mut()
                                    .zip(&src[ky * len..(ky + 1) * len])
                                {
                                    *d += v;
                                }
                            }
                            row += 1;
                        }
                    }
                }
            }
        }
        dx
    }

    fn pool_forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<usize>) {
        let (h, w, c) = (self.input[0], self.input[1], self.input[2]);
        let (ho, wo) = (self.output[0], self.output[1]);
        let mut out = Vec::with_capacity(batch * ho * wo * c);
        let mut argmax = Vec::with_capacity(out.capacity());
        for s in 0..batch {
            let base = s * h * w * c;
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        // First maximum in scan order wins ties.
                        let mut best = base + ((POOL * oy) * w + POOL * ox) * c + ch;
                        for dy in 0..POOL {
                            for dx in 0..POOL {
                                let idx = base + ((POOL * oy + dy) * w + POOL * ox + dx) * c + ch;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        (out, argmax)
    }
}

/// Standalone highway evaluation: `T(x)·D(x) + (1 − T(x))·x` with
/// `D(x) = relu(x·w_d + b_d)` and `T(x) = sigmoid(x·w_t + b_t)`.
pub fn highway_forward(
    x: &Tensor,
    (w_d, b_d): (&Tensor, &Tensor),
    (w_t, b_t): (&Tensor, &Tensor),
) -> Result<Tensor> {
    let (batch, width) = match x.shape() {
        [b, w] => (*b, *w),
        s => {
            return Err(Error::Argument(format!(
                "highway input must be [batch, width], got {s:?}"
            )))
        }
    };
    for (w, b) in [(w_d, b_d), (w_t, b_t)] {
        if w.shape() != [width, width] || b.shape() != [width] {
            return Err(Error::shape("highway_forward", &[width, width], w.shape()));
        }
    }
    let d: Vec<f64> = affine(x.data(), batch, w_d, b_d)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let t = affine(x.data(), batch, w_t, b_t);
    let y = d
        .iter()
        .zip(&t)
        .zip(x.data())
        .map(|((&dv, &z), &xv)| {
            let g = sigmoid(z);
            g * dv + (1.0 - g) * xv
        })
        .collect();
    Tensor::new(x.shape(), y)
}
