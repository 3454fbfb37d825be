//! Incremental forward passes for inputs that differ from a cached base
//! image only inside a small rectangle. Only the receptive-field cone of the
//! changed region is recomputed, which makes sliding-window occlusion cheap.

use super::layer::{argmax_window, Layer};
use super::model::{softmax, Model};
use crate::error::Result;
use crate::tensor::Tensor;

/// Half-open spatial rectangle `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Rect {
    fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }
}

pub struct LocalForward<'m> {
    model: &'m Model,
    base: Vec<Tensor>,
    work: Vec<Tensor>,
    /// Index of the first layer whose input is no longer spatial.
    spatial_prefix: usize,
}

impl<'m> LocalForward<'m> {
    pub fn new(model: &'m Model, image: &Tensor) -> Result<Self> {
        let pass = model.forward(image)?;
        let spatial_prefix = model
            .layers()
            .iter()
            .position(|l| {
                !matches!(
                    l,
                    Layer::Conv2d(_) | Layer::Relu | Layer::BatchNorm(_) | Layer::MaxPool2
                )
            })
            .unwrap_or(model.layers().len());
        let base: Vec<Tensor> = pass.activations[..=spatial_prefix].to_vec();
        Ok(Self {
            model,
            work: base.clone(),
            base,
            spatial_prefix,
        })
    }

    pub fn base_image(&self) -> &Tensor {
        &self.base[0]
    }

    /// Class probabilities of the base image with the values inside `rect`
    /// (all channels) replaced by `fill(channel, y, x, old)`.
    pub fn probabilities_with_patch(
        &mut self,
        rect: Rect,
        fill: impl Fn(usize, usize, usize, f64) -> f64,
    ) -> Vec<f64> {
        let mut dirty = Vec::with_capacity(self.spatial_prefix + 1);
        {
            let input = &mut self.work[0];
            let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let rect = Rect { y1: rect.y1.min(h), x1: rect.x1.min(w), ..rect };
            let data = input.data_mut();
            for ch in 0..c {
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        let i = (ch * h + y) * w + x;
                        data[i] = fill(ch, y, x, data[i]);
                    }
                }
            }
            dirty.push(rect);
        }
        for i in 0..self.spatial_prefix {
            let d = dirty[i];
            let next = if d.is_empty() {
                d
            } else {
                let (before, after) = self.work.split_at_mut(i + 1);
                propagate(&self.model.layers()[i], &before[i], &mut after[0], d)
            };
            dirty.push(next);
        }
        let mut x = self.work[self.spatial_prefix].clone();
        for layer in &self.model.layers()[self.spatial_prefix..] {
            x = layer.forward(&x);
        }
        // restore working copies
        for (i, d) in dirty.iter().enumerate() {
            if d.is_empty() {
                continue;
            }
            let shape = self.base[i].shape().to_vec();
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let src = self.base[i].data();
            let dst = self.work[i].data_mut();
            for ch in 0..c {
                for y in d.y0..d.y1 {
                    let row = (ch * h + y) * w;
                    dst[row + d.x0..row + d.x1].copy_from_slice(&src[row + d.x0..row + d.x1]);
                }
            }
        }
        softmax(x.data())
    }
}

/// Recomputes `output` inside the region affected by `dirty` in `input`;
/// returns that region.
fn propagate(layer: &Layer, input: &Tensor, output: &mut Tensor, dirty: Rect) -> Rect {
    let ishape = input.shape();
    let (ih, iw) = (ishape[1], ishape[2]);
    let oshape = output.shape().to_vec();
    let (oc, oh, ow) = (oshape[0], oshape[1], oshape[2]);
    let x = input.data();
    let out = output.data_mut();
    match layer {
        Layer::Conv2d(conv) => {
            let (k, pad) = (conv.kernel as isize, conv.padding as isize);
            let r = Rect {
                y0: (dirty.y0 as isize + pad + 1 - k).max(0) as usize,
                y1: ((dirty.y1 as isize + pad) as usize).min(oh),
                x0: (dirty.x0 as isize + pad + 1 - k).max(0) as usize,
                x1: ((dirty.x1 as isize + pad) as usize).min(ow),
            };
            let cin = conv.in_channels;
            let kk = conv.kernel;
            let (rh, rw) = (r.y1.saturating_sub(r.y0), r.x1.saturating_sub(r.x0));
            let mut acc = vec![0.0; rh * rw];
            for o in 0..oc {
                acc.fill(conv.bias[o]);
                for c in 0..cin {
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let wv = conv.weight[((o * cin + c) * kk + ky) * kk + kx];
                            for (ry, oy) in (r.y0..r.y1).enumerate() {
                                let iy = oy as isize + ky as isize - pad;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let row = (c * ih + iy as usize) * iw;
                                // valid ox: 0 <= ox + kx - pad < iw
                                let lo = (pad - kx as isize).max(r.x0 as isize) as usize;
                                let hi = ((iw as isize + pad - kx as isize).min(r.x1 as isize)).max(lo as isize) as usize;
                                let src = &x[(row as isize + lo as isize + kx as isize - pad) as usize..][..hi - lo];
                                let dst = &mut acc[ry * rw + (lo - r.x0)..][..hi - lo];
                                for (d, v) in dst.iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            }
                        }
                    }
                }
                for (ry, oy) in (r.y0..r.y1).enumerate() {
                    let row = (o * oh + oy) * ow;
                    out[row + r.x0..row + r.x1].copy_from_slice(&acc[ry * rw..(ry + 1) * rw]);
                }
            }
            r
        }
        Layer::Relu | Layer::BatchNorm(_) => {
            let affine = match layer {
                Layer::BatchNorm(bn) => Some(bn.affine()),
                _ => None,
            };
            for c in 0..oc {
                for y in dirty.y0..dirty.y1 {
                    for xx in dirty.x0..dirty.x1 {
                        let i = (c * oh + y) * ow + xx;
                        out[i] = match &affine {
                            Some((s, b)) => s[c] * x[i] + b[c],
                            None => x[i].max(0.0),
                        };
                    }
                }
            }
            dirty
        }
        Layer::MaxPool2 => {
            let r = Rect {
                y0: dirty.y0 / 2,
                y1: dirty.y1.div_ceil(2).min(oh),
                x0: dirty.x0 / 2,
                x1: dirty.x1.div_ceil(2).min(ow),
            };
            for c in 0..oc {
                for oy in r.y0..r.y1 {
                    for ox in r.x0..r.x1 {
                        let base = (c * ih + 2 * oy) * iw + 2 * ox;
                        out[(c * oh + oy) * ow + ox] = x[argmax_window(x, base, iw)];
                    }
                }
            }
            r
        }
        _ => unreachable!("only spatial layers are propagated locally"),
    }
}
