//! Backpropagation-based attributions.

use crate::error::{Error, Result};
use crate::nn::{ForwardPass, Layer, Model, ReluMode};
use crate::tensor::Tensor;

/// Gradient of `Σ grad_logits · logits` with respect to `activations[stop]`.
pub(crate) fn backward_to(model: &Model, pass: &ForwardPass, grad_logits: &[f64], mode: ReluMode, stop: usize) -> Vec<f64> {
    let mut grad = grad_logits.to_vec();
    for i in (stop..model.layers().len()).rev() {
        grad = model.layers()[i].backward_input(&pass.activations[i], &grad, mode);
    }
    grad
}

fn onehot(n: usize, target: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[target] = 1.0;
    v
}

pub fn gradient(model: &Model, image: &Tensor, target: usize, mode: ReluMode) -> Result<Tensor> {
    model.input_gradient(image, target, mode)
}

pub fn input_x_gradient(model: &Model, image: &Tensor, target: usize) -> Result<Tensor> {
    gradient(model, image, target, ReluMode::Standard)?.hadamard(image)
}

/// `x ⊙ mean_k ∇f(x·(k + ½)/m)`: integrated gradients from a zero baseline
/// with the midpoint rule.
pub fn integrated_gradients(model: &Model, image: &Tensor, target: usize, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    let mut acc = vec![0.0; image.len()];
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        let g = model.input_gradient(&image.map(|v| v * t), target, ReluMode::Standard)?;
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v;
        }
    }
    let out = acc
        .iter()
        .zip(image.data())
        .map(|(a, x)| x * a / steps as f64)
        .collect();
    Tensor::new(image.shape().to_vec(), out)
}

/// Index `r` such that `activations[r + 1]` is the rectified output of the
/// last convolution.
fn last_conv_output(model: &Model) -> Result<usize> {
    let layers = model.layers();
    let conv = layers
        .iter()
        .rposition(|l| matches!(l, Layer::Conv2d(_)))
        .ok_or_else(|| Error::invalid("grad-cam needs a convolutional layer"))?;
    let relu = layers[conv..].iter().position(|l| matches!(l, Layer::Relu));
    Ok(match relu {
        Some(r) if layers[conv + 1..conv + r].iter().all(|l| matches!(l, Layer::BatchNorm(_))) => conv + r,
        _ => conv,
    })
}

/// Bilinear resize of a single-channel map, half-pixel centres.
pub(crate) fn upsample_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let coord = |d: usize, s: usize, n: usize| {
        let c = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(s - 1), c - i0 as f64)
    };
    let mut out = vec![0.0; dh * dw];
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[y * dw + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Grad-CAM at the last convolution, upsampled to the input size.
pub fn gradcam(model: &Model, pass: &ForwardPass, target: usize) -> Result<Vec<f64>> {
    let r = last_conv_output(model)?;
    let act = &pass.activations[r + 1];
    let (c, h, w) = act.chw()?;
    let grad = backward_to(model, pass, &onehot(model.num_classes(), target), ReluMode::Standard, r + 1);
    let n = h * w;
    let a = act.data();
    let mut cam = vec![0.0; n];
    for k in 0..c {
        let alpha = grad[k * n..(k + 1) * n].iter().sum::<f64>() / n as f64;
        for (p, v) in cam.iter_mut().enumerate() {
            *v += alpha * a[k * n + p];
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let (_, ih, iw) = pass.activations[0].chw()?;
    Ok(upsample_bilinear(&cam, h, w, ih, iw))
}

pub fn guided_gradcam(model: &Model, image: &Tensor, target: usize) -> Result<Tensor> {
    let pass = model.forward(image)?;
    let cam = gradcam(model, &pass, target)?;
    let mut guided = model.gradient_from_pass(&pass, target, ReluMode::Guided);
    let n = cam.len();
    for (i, v) in guided.data_mut().iter_mut().enumerate() {
        *v *= cam[i % n];
    }
    Ok(guided)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Dense};

    fn linear_model(weight: Vec<f64>, h: usize, w: usize) -> Model {
        let n = 3 * h * w;
        Model::new(
            vec![
                Layer::Flatten,
                Layer::Dense(Dense {
                    in_features: n,
                    out_features: 2,
                    weight,
                    bias: vec![0.3, -0.1],
                }),
            ],
            vec![3, h, w],
            2,
        )
        .unwrap()
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(seed, 0);
        Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn gradient_of_linear_model_is_weight_row() {
        let n = 3 * 4 * 4;
        let weight: Vec<f64> = (0..2 * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = linear_model(weight.clone(), 4, 4);
        let g = gradient(&m, &image(4, 4, 1), 1, ReluMode::Standard).unwrap();
        assert_eq!(g.data(), &weight[n..]);
    }

    #[test]
    fn one_step_ig_is_input_times_midpoint_gradient() {
        let m = Model::micro_cnn(16, 16, 2, 3);
        let x = image(16, 16, 2);
        let ig = integrated_gradients(&m, &x, 0, 1).unwrap();
        let g = m.input_gradient(&x.map(|v| v * 0.5), 0, ReluMode::Standard).unwrap();
        assert_eq!(ig, g.hadamard(&x).unwrap());
    }

    #[test]
    fn relu_rules_coincide_without_relus() {
        let conv = Conv2d {
            in_channels: 3,
            out_channels: 2,
            kernel: 3,
            padding: 1,
            weight: (0..54).map(|i| (i as f64 * 0.71).cos()).collect(),
            bias: vec![0.1, 0.2],
        };
        let m = Model::new(
            vec![
                Layer::Conv2d(conv),
                Layer::MaxPool2,
                Layer::GlobalAvgPool,
                Layer::Dense(Dense { in_features: 2, out_features: 2, weight: vec![1.0, -0.5, 0.3, 2.0], bias: vec![0.0; 2] }),
            ],
            vec![3, 8, 8],
            2,
        )
        .unwrap();
        let x = image(8, 8, 4);
        let g = gradient(&m, &x, 1, ReluMode::Standard).unwrap();
        assert_eq!(gradient(&m, &x, 1, ReluMode::Deconv).unwrap(), g);
        assert_eq!(gradient(&m, &x, 1, ReluMode::Guided).unwrap(), g);
    }

    #[test]
    fn upsample_preserves_constants_and_corners_align_to_centres() {
        let up = upsample_bilinear(&[2.0; 4], 2, 2, 8, 8);
        assert!(up.iter().all(|v| (*v - 2.0).abs() < 1e-15));
        let up = upsample_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn gradcam_is_nonnegative_and_input_sized() {
        let m = Model::micro_cnn(16, 16, 2, 5);
        let x = image(16, 16, 6);
        let pass = m.forward(&x).unwrap();
        let cam = gradcam(&m, &pass, 1).unwrap();
        assert_eq!(cam.len(), 256);
        assert!(cam.iter().all(|v| *v >= 0.0));
    }
}
