use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward rule applied at ReLU nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReluMode {
    /// Gate by the sign of the forward pre-activation (the true gradient).
    Standard,
    /// Gate by the sign of the incoming gradient only.
    Deconv,
    /// Gate by both.
    Guided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Inference-mode batch normalization over the leading (channel) axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
        }
    }

    /// Per-channel `(scale, shift)` so that `bn(x) = scale·x + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.running_mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        (scale, shift)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    #[serde(rename = "maxpool2")]
    MaxPool2,
    #[serde(rename = "batchnorm")]
    BatchNorm(BatchNorm),
    GlobalAvgPool,
    Flatten,
}

fn expect_chw(shape: &[usize], layer: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(format!(
            "{layer} needs a (C, H, W) input, got {shape:?}"
        ))),
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::GlobalAvgPool => "global-avg-pool",
            Layer::Flatten => "flatten",
        }
    }

    /// Checks parameter consistency and returns the output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(conv) => {
                let (c, h, w) = expect_chw(input, "conv2d")?;
                if c != conv.in_channels {
                    return Err(Error::ShapeMismatch {
                        expected: vec![conv.in_channels, h, w],
                        got: input.to_vec(),
                    });
                }
                let k = conv.kernel;
                if k == 0 || h + 2 * conv.padding < k || w + 2 * conv.padding < k {
                    return Err(Error::invalid("conv2d kernel larger than padded input"));
                }
                if conv.weight.len() != conv.out_channels * c * k * k
                    || conv.bias.len() != conv.out_channels
                {
                    return Err(Error::invalid("conv2d parameter sizes inconsistent"));
                }
                Ok(vec![
                    conv.out_channels,
                    h + 2 * conv.padding + 1 - k,
                    w + 2 * conv.padding + 1 - k,
                ])
            }
            Layer::Dense(d) => {
                if input != [d.in_features] {
                    return Err(Error::ShapeMismatch {
                        expected: vec![d.in_features],
                        got: input.to_vec(),
                    });
                }
                if d.weight.len() != d.in_features * d.out_features
                    || d.bias.len() != d.out_features
                {
                    return Err(Error::invalid("dense parameter sizes inconsistent"));
                }
                Ok(vec![d.out_features])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2 => {
                let (c, h, w) = expect_chw(input, "maxpool2")?;
                if h < 2 || w < 2 {
                    return Err(Error::invalid("maxpool2 input smaller than 2×2"));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            Layer::BatchNorm(bn) => {
                let c = input[0];
                let n = bn.gamma.len();
                if c != n
                    || bn.beta.len() != n
                    || bn.running_mean.len() != n
                    || bn.running_var.len() != n
                {
                    return Err(Error::invalid(format!(
                        "batchnorm has {n} channels, input has {c}"
                    )));
                }
                if bn.running_var.iter().any(|v| *v <= 0.0) || bn.eps < 0.0 {
                    return Err(Error::invalid("batchnorm variance must be positive"));
                }
                Ok(input.to_vec())
            }
            Layer::GlobalAvgPool => {
                let (c, _, _) = expect_chw(input, "global-avg-pool")?;
                Ok(vec![c])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let shape = input.shape();
        let x = input.data();
        match self {
            Layer::Conv2d(conv) => {
                let g = conv.geometry(shape);
                let out = kernels::conv_forward(x, &g, &conv.weight, Some(&conv.bias), conv.out_channels);
                Tensor::from_parts(vec![conv.out_channels, g.out_height(), g.out_width()], out)
            }
            Layer::Dense(d) => {
                let out = d
                    .bias
                    .iter()
                    .enumerate()
                    .map(|(o, b)| {
                        let row = &d.weight[o * d.in_features..(o + 1) * d.in_features];
                        b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                Tensor::from_parts(vec![d.out_features], out)
            }
            Layer::Relu => input.map(|v| v.max(0.0)),
            Layer::MaxPool2 => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = (ch * h + 2 * oy) * w + 2 * ox;
                            out[(ch * oh + oy) * ow + ox] =
                                x[base].max(x[base + 1]).max(x[base + w]).max(x[base + w + 1]);
                        }
                    }
                }
                Tensor::from_parts(vec![c, oh, ow], out)
            }
            Layer::BatchNorm(bn) => {
                let (scale, shift) = bn.affine();
                let per = x.len() / scale.len();
                let out = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| scale[i / per] * v + shift[i / per])
                    .collect();
                Tensor::from_parts(shape.to_vec(), out)
            }
            Layer::GlobalAvgPool => {
                let c = shape[0];
                let per = x.len() / c;
                let out = x.chunks(per).map(|p| p.iter().sum::<f64>() / per as f64).collect();
                Tensor::from_parts(vec![c], out)
            }
            Layer::Flatten => Tensor::from_parts(vec![x.len()], x.to_vec()),
        }
    }

    /// Gradient with respect to the layer input, given the forward input and
    /// the gradient at the output.
    pub fn backward_input(&self, input: &Tensor, grad_out: &[f64], mode: ReluMode) -> Vec<f64> {
        let shape = input.shape();
        let x = input.data();
        match self {
            Layer::Conv2d(conv) => {
                let g = conv.geometry(shape);
                kernels::conv_transpose(grad_out, &g, &conv.weight, conv.out_channels)
            }
            Layer::Dense(d) => {
                let mut gin = vec![0.0; d.in_features];
                for (o, go) in grad_out.iter().enumerate() {
                    if *go == 0.0 {
                        continue;
                    }
                    let row = &d.weight[o * d.in_features..(o + 1) * d.in_features];
                    for (gi, w) in gin.iter_mut().zip(row) {
                        *gi += go * w;
                    }
                }
                gin
            }
            Layer::Relu => x
                .iter()
                .zip(grad_out)
                .map(|(&z, &g)| match mode {
                    ReluMode::Standard => {
                        if z > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    }
                    ReluMode::Deconv => g.max(0.0),
                    ReluMode::Guided => {
                        if z > 0.0 {
                            g.max(0.0)
                        } else {
                            0.0
                        }
                    }
                })
                .collect(),
            Layer::MaxPool2 => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut gin = vec![0.0; x.len()];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = (ch * h + 2 * oy) * w + 2 * ox;
                            let idx = argmax_window(x, base, w);
                            gin[idx] += grad_out[(ch * oh + oy) * ow + ox];
                        }
                    }
                }
                gin
            }
            Layer::BatchNorm(bn) => {
                let (scale, _) = bn.affine();
                let per = x.len() / scale.len();
                grad_out
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * scale[i / per])
                    .collect()
            }
            Layer::GlobalAvgPool => {
                let c = shape[0];
                let per = x.len() / c;
                (0..x.len()).map(|i| grad_out[i / per] / per as f64).collect()
            }
            Layer::Flatten => grad_out.to_vec(),
        }
    }

    /// Accumulates parameter gradients into `grads` (layout of
    /// [`Layer::params`]).
    pub fn accumulate_param_grads(&self, input: &Tensor, grad_out: &[f64], grads: &mut [Vec<f64>]) {
        let x = input.data();
        match self {
            Layer::Conv2d(conv) => {
                let g = conv.geometry(input.shape());
                let (gw, rest) = grads.split_at_mut(1);
                kernels::conv_param_grad(x, &g, grad_out, conv.out_channels, &mut gw[0], &mut rest[0]);
            }
            Layer::Dense(d) => {
                for (o, go) in grad_out.iter().enumerate() {
                    let row = &mut grads[0][o * d.in_features..(o + 1) * d.in_features];
                    for (gw, v) in row.iter_mut().zip(x) {
                        *gw += go * v;
                    }
                    grads[1][o] += go;
                }
            }
            Layer::BatchNorm(bn) => {
                let c = bn.gamma.len();
                let per = x.len() / c;
                for ch in 0..c {
                    let inv_std = 1.0 / (bn.running_var[ch] + bn.eps).sqrt();
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for i in ch * per..(ch + 1) * per {
                        dg += grad_out[i] * (x[i] - bn.running_mean[ch]) * inv_std;
                        db += grad_out[i];
                    }
                    grads[0][ch] += dg;
                    grads[1][ch] += db;
                }
            }
            _ => {}
        }
    }

    /// Trainable parameters as `(values, apply_weight_decay)`.
    pub fn params(&self) -> Vec<(&Vec<f64>, bool)> {
        match self {
            Layer::Conv2d(c) => vec![(&c.weight, true), (&c.bias, false)],
            Layer::Dense(d) => vec![(&d.weight, true), (&d.bias, false)],
            Layer::BatchNorm(bn) => vec![(&bn.gamma, false), (&bn.beta, false)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => Vec::new(),
        }
    }
}

/// Index of the first maximum in the 2×2 window starting at `base`.
pub(crate) fn argmax_window(x: &[f64], base: usize, w: usize) -> usize {
    let mut best = base;
    for idx in [base + 1, base + w, base + w + 1] {
        if x[idx] > x[best] {
            best = idx;
        }
    }
    best
}

impl Conv2d {
    pub(crate) fn geometry(&self, input_shape: &[usize]) -> ConvGeometry {
        ConvGeometry {
            in_ch: self.in_channels,
            height: input_shape[1],
            width: input_shape[2],
            kernel: self.kernel,
            padding: self.padding,
        }
    }
}
