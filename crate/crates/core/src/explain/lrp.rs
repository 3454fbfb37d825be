//! Layer-wise relevance propagation with per-layer rule composites.
//!
//! Relevance starts as the target logit and flows backwards. Dense layers use
//! the ε-rule, pooling and activations route relevance like gradients do, and
//! convolutions follow the composite. Biases are not given relevance by the
//! convolution rules. Batch norm must be folded into the convolutions first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::kernels::{conv_forward, conv_transpose, ConvGeometry};
use crate::nn::{Conv2d, Dense, Layer, Model, ReluMode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composite {
    /// z⁺ convolutions, flat first layer.
    EpsilonPlusFlat,
    /// γ convolutions, box-bounded first layer.
    EpsilonGammaBox,
    /// α=2, β=1 convolutions, flat first layer.
    EpsilonAlpha2Beta1Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrpParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for LrpParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            gamma: 0.25,
            low: 0.0,
            high: 1.0,
        }
    }
}

/// `z + ε·sign(z)` with sign(0) = 1.
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// A linear layer viewed as `x ↦ W x` (bias excluded).
enum Linear<'a> {
    Conv(&'a Conv2d, ConvGeometry),
    Dense(&'a Dense),
}

impl Linear<'_> {
    fn weight(&self) -> &[f64] {
        match self {
            Linear::Conv(c, _) => &c.weight,
            Linear::Dense(d) => &d.weight,
        }
    }

    fn bias(&self) -> &[f64] {
        match self {
            Linear::Conv(c, _) => &c.bias,
            Linear::Dense(d) => &d.bias,
        }
    }

    fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        match self {
            Linear::Conv(c, g) => conv_forward(x, g, w, None, c.out_channels),
            Linear::Dense(d) => (0..d.out_features)
                .map(|o| w[o * d.in_features..(o + 1) * d.in_features].iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    fn transpose(&self, s: &[f64], w: &[f64]) -> Vec<f64> {
        match self {
            Linear::Conv(c, g) => conv_transpose(s, g, w, c.out_channels),
            Linear::Dense(d) => {
                let mut out = vec![0.0; d.in_features];
                for (o, so) in s.iter().enumerate() {
                    for (v, wv) in out.iter_mut().zip(&w[o * d.in_features..(o + 1) * d.in_features]) {
                        *v += so * wv;
                    }
                }
                out
            }
        }
    }

    /// `Σ_t a_t ⊙ Wᵗ(R / stab(Σ_t W_t a_t))` for paired (input, weight)
    /// terms sharing one normaliser.
    fn redistribute(&self, terms: &[(&[f64], &[f64])], bias: Option<&[f64]>, relevance: &[f64], eps: f64) -> Vec<f64> {
        let mut z = vec![0.0; relevance.len()];
        for (a, w) in terms {
            for (zi, v) in z.iter_mut().zip(self.forward(a, w)) {
                *zi += v;
            }
        }
        if let Some(b) = bias {
            let per = z.len() / b.len();
            for (i, zi) in z.iter_mut().enumerate() {
                *zi += b[i / per];
            }
        }
        let s: Vec<f64> = relevance.iter().zip(&z).map(|(r, z)| r / stabilize(*z, eps)).collect();
        let mut out = vec![0.0; terms[0].0.len()];
        for (a, w) in terms {
            for ((o, c), x) in out.iter_mut().zip(self.transpose(&s, w)).zip(a.iter()) {
                *o += x * c;
            }
        }
        out
    }
}

fn pos(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.min(0.0)).collect()
}

fn epsilon_rule(lin: &Linear, a: &[f64], r: &[f64], eps: f64) -> Vec<f64> {
    lin.redistribute(&[(a, lin.weight())], Some(lin.bias()), r, eps)
}

/// Positive contributions only (α=1, β=0).
fn zplus_rule(lin: &Linear, a: &[f64], r: &[f64], eps: f64) -> Vec<f64> {
    let (ap, an) = (pos(a), neg(a));
    let (wp, wn) = (pos(lin.weight()), neg(lin.weight()));
    lin.redistribute(&[(&ap, &wp), (&an, &wn)], None, r, eps)
}

fn alpha_beta_rule(lin: &Linear, a: &[f64], r: &[f64], alpha: f64, beta: f64, eps: f64) -> Vec<f64> {
    let (ap, an) = (pos(a), neg(a));
    let (wp, wn) = (pos(lin.weight()), neg(lin.weight()));
    let rp = lin.redistribute(&[(&ap, &wp), (&an, &wn)], None, r, eps);
    let rn = lin.redistribute(&[(&ap, &wn), (&an, &wp)], None, r, eps);
    rp.iter().zip(&rn).map(|(p, n)| alpha * p - beta * n).collect()
}

fn gamma_rule(lin: &Linear, a: &[f64], r: &[f64], gamma: f64, eps: f64) -> Vec<f64> {
    let (ap, an) = (pos(a), neg(a));
    let w = lin.weight();
    let wpg: Vec<f64> = w.iter().map(|v| v + gamma * v.max(0.0)).collect();
    let wng: Vec<f64> = w.iter().map(|v| v + gamma * v.min(0.0)).collect();
    lin.redistribute(&[(&ap, &wpg), (&an, &wng)], None, r, eps)
}

fn flat_rule(lin: &Linear, a: &[f64], r: &[f64], eps: f64) -> Vec<f64> {
    let ones_in = vec![1.0; a.len()];
    let ones_w = vec![1.0; lin.weight().len()];
    lin.redistribute(&[(&ones_in, &ones_w)], None, r, eps)
}

fn box_rule(lin: &Linear, a: &[f64], r: &[f64], low: f64, high: f64, eps: f64) -> Vec<f64> {
    let w = lin.weight().to_vec();
    let (wp, wn) = (pos(&w), neg(&w));
    let l = vec![low; a.len()];
    let h = vec![high; a.len()];
    let wpm: Vec<f64> = wp.iter().map(|v| -v).collect();
    let wnm: Vec<f64> = wn.iter().map(|v| -v).collect();
    lin.redistribute(&[(a, &w), (&l, &wpm), (&h, &wnm)], None, r, eps)
}

fn linear_of<'a>(layer: &'a Layer, input_shape: &[usize]) -> Option<Linear<'a>> {
    match layer {
        Layer::Conv2d(c) => Some(Linear::Conv(c, c.geometry(input_shape))),
        Layer::Dense(d) => Some(Linear::Dense(d)),
        _ => None,
    }
}

/// Raw relevance map (3×H×W, background not masked) for `target`.
pub fn lrp(model: &Model, image: &Tensor, target: usize, composite: Composite, params: LrpParams) -> Result<Tensor> {
    if !model.is_canonized() {
        return Err(Error::Canonization {
            index: 0,
            reason: "LRP needs a model with batch norm folded into its convolutions".into(),
        });
    }
    if let Some(i) = model.layers().iter().position(|l| matches!(l, Layer::BatchNorm(_))) {
        return Err(Error::Canonization {
            index: i,
            reason: "unfolded batch norm".into(),
        });
    }
    if target >= model.num_classes() {
        return Err(Error::invalid(format!("target class {target} out of range")));
    }
    let pass = model.forward(image)?;
    let mut r = vec![0.0; model.num_classes()];
    r[target] = pass.logits()[target];
    let first = model.layers().iter().position(|l| linear_of(l, &[1, 1, 1]).is_some());
    let eps = params.epsilon;
    for (i, layer) in model.layers().iter().enumerate().rev() {
        let input = &pass.activations[i];
        let a = input.data();
        r = match (layer, linear_of(layer, input.shape())) {
            (_, Some(lin)) if Some(i) == first => match composite {
                Composite::EpsilonGammaBox => box_rule(&lin, a, &r, params.low, params.high, eps),
                _ => flat_rule(&lin, a, &r, eps),
            },
            (Layer::Dense(_), Some(lin)) => epsilon_rule(&lin, a, &r, eps),
            (_, Some(lin)) => match composite {
                Composite::EpsilonPlusFlat => zplus_rule(&lin, a, &r, eps),
                Composite::EpsilonGammaBox => gamma_rule(&lin, a, &r, params.gamma, eps),
                Composite::EpsilonAlpha2Beta1Flat => alpha_beta_rule(&lin, a, &r, 2.0, 1.0, eps),
            },
            (Layer::GlobalAvgPool, _) => {
                let c = input.shape()[0];
                let per = a.len() / c;
                (0..a.len())
                    .map(|j| {
                        let ch = j / per;
                        let z: f64 = a[ch * per..(ch + 1) * per].iter().sum();
                        a[j] * r[ch] / stabilize(z, eps)
                    })
                    .collect()
            }
            (Layer::Relu | Layer::Flatten, _) => r,
            (Layer::MaxPool2, _) => layer.backward_input(input, &r, ReluMode::Standard),
            (Layer::BatchNorm(_), _) => unreachable!("rejected above"),
            (Layer::Conv2d(_) | Layer::Dense(_), None) => unreachable!("linear layers always map"),
        };
    }
    Tensor::new(image.shape().to_vec(), r)
}
