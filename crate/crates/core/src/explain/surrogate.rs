//! Segment-level surrogate models: LIME and Kernel SHAP. Both fit a linear
//! model of the target probability on binary "segment kept" vectors and
//! share one set of perturbed forward passes.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::occlusion::foreground_mean;
use crate::error::{Error, Result};
use crate::nn::Classifier;
use crate::rng::{stream_rng, tag};
use crate::segment::SegmentMap;
use crate::tensor::Tensor;

/// Perturbation samples over the foreground segments of one image.
#[derive(Clone, Debug)]
pub struct SegmentSamples {
    /// `masks[s][j]` is true when segment `j + 1` is kept in sample `s`.
    pub masks: Vec<Vec<bool>>,
    /// Class probabilities of each sample.
    pub outputs: Vec<Vec<f64>>,
    /// Probabilities with every segment replaced.
    pub empty: Vec<f64>,
    /// Probabilities of the unperturbed image.
    pub full: Vec<f64>,
    labels: Vec<u32>,
    shape: Vec<usize>,
    /// Distinct forward passes actually run.
    pub evaluations: usize,
}

impl SegmentSamples {
    pub fn segments(&self) -> usize {
        self.masks.first().map_or(0, |m| m.len())
    }

    /// Broadcasts per-segment coefficients to a 3×H×W map.
    fn to_heatmap(&self, coef: &[f64]) -> Tensor {
        let n = self.labels.len();
        let c = self.shape[0];
        let mut out = vec![0.0; c * n];
        for (p, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                for ch in 0..c {
                    out[ch * n + p] = coef[l as usize - 1];
                }
            }
        }
        Tensor::from_parts(self.shape.clone(), out)
    }
}

fn perturbed(image: &Tensor, labels: &[u32], keep: &[bool], fill: &[f64]) -> Tensor {
    let mut img = image.clone();
    let n = labels.len();
    let d = img.data_mut();
    for (p, &l) in labels.iter().enumerate() {
        if l > 0 && !keep[l as usize - 1] {
            for (ch, f) in fill.iter().enumerate() {
                d[ch * n + p] = *f;
            }
        }
    }
    img
}

/// Draws `n` keep-vectors (the first keeps everything, the rest are fair
/// coin flips per segment) and evaluates each distinct one once. Replaced
/// segments take the per-channel foreground mean.
pub fn sample_segments(
    classifier: &dyn Classifier,
    image: &Tensor,
    foreground: &[bool],
    segments: &SegmentMap,
    n: usize,
    seed: u64,
) -> Result<SegmentSamples> {
    let (_, h, w) = image.chw()?;
    if segments.height != h || segments.width != w {
        return Err(Error::invalid("segment map does not match the image"));
    }
    let m = segments.foreground_segments();
    if m == 0 {
        return Err(Error::invalid("image has no foreground segments"));
    }
    if n == 0 {
        return Err(Error::invalid("surrogate models need at least one sample"));
    }
    let fill = foreground_mean(image, foreground);
    let mut rng = stream_rng(seed, tag::EXPLAIN);
    let mut cache: HashMap<Vec<bool>, Vec<f64>> = HashMap::new();
    let mut eval = |keep: &Vec<bool>| -> Result<Vec<f64>> {
        if let Some(p) = cache.get(keep) {
            return Ok(p.clone());
        }
        let p = classifier.probabilities(&perturbed(image, &segments.labels, keep, &fill))?;
        cache.insert(keep.clone(), p.clone());
        Ok(p)
    };
    let mut masks = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for s in 0..n {
        let keep: Vec<bool> = if s == 0 { vec![true; m] } else { (0..m).map(|_| rng.random_bool(0.5)).collect() };
        outputs.push(eval(&keep)?);
        masks.push(keep);
    }
    let full = eval(&vec![true; m])?;
    let empty = eval(&vec![false; m])?;
    Ok(SegmentSamples {
        masks,
        outputs,
        empty,
        full,
        labels: segments.labels.clone(),
        shape: image.shape().to_vec(),
        evaluations: cache.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeParams {
    pub kernel_width: f64,
    pub ridge: f64,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self { kernel_width: 0.25, ridge: 1e-3 }
    }
}

/// Cosine distance between a keep-vector and the all-kept vector.
fn cosine_distance(kept: usize, m: usize) -> f64 {
    if kept == 0 {
        1.0
    } else {
        1.0 - (kept as f64 / m as f64).sqrt()
    }
}

/// Weighted ridge regression with an unpenalised intercept. Returns the
/// slope coefficients.
pub(crate) fn weighted_ridge(x: &DMatrix<f64>, y: &[f64], weights: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let (n, m) = x.shape();
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::invalid("all sample weights are zero"));
    }
    let xbar: Vec<f64> = (0..m).map(|j| (0..n).map(|i| weights[i] * x[(i, j)]).sum::<f64>() / wsum).collect();
    let ybar = (0..n).map(|i| weights[i] * y[i]).sum::<f64>() / wsum;
    let mut a = DMatrix::<f64>::identity(m, m) * ridge;
    let mut b = DVector::<f64>::zeros(m);
    for i in 0..n {
        let wi = weights[i];
        if wi == 0.0 {
            continue;
        }
        let xc: Vec<f64> = (0..m).map(|j| x[(i, j)] - xbar[j]).collect();
        for j in 0..m {
            b[j] += wi * xc[j] * (y[i] - ybar);
            for k in 0..m {
                a[(j, k)] += wi * xc[j] * xc[k];
            }
        }
    }
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::invalid(format!("surrogate regression failed: {e}")))?,
    };
    Ok(sol.iter().copied().collect())
}

fn design(masks: &[Vec<bool>]) -> DMatrix<f64> {
    let m = masks.first().map_or(0, |r| r.len());
    DMatrix::from_fn(masks.len(), m, |i, j| if masks[i][j] { 1.0 } else { 0.0 })
}

/// Per-segment LIME coefficients for `target`.
pub fn lime_coefficients(samples: &SegmentSamples, target: usize, params: LimeParams) -> Result<Vec<f64>> {
    let m = samples.segments();
    let y: Vec<f64> = samples.outputs.iter().map(|p| p[target]).collect();
    let weights: Vec<f64> = samples
        .masks
        .iter()
        .map(|z| {
            let d = cosine_distance(z.iter().filter(|v| **v).count(), m);
            (-d * d / (2.0 * params.kernel_width * params.kernel_width)).exp()
        })
        .collect();
    weighted_ridge(&design(&samples.masks), &y, &weights, params.ridge)
}

/// Shapley kernel weight of a coalition of size `k` out of `m`; infinite at
/// the ends, which are imposed as constraints instead.
pub fn shapley_kernel(m: usize, k: usize) -> f64 {
    if k == 0 || k == m {
        return f64::INFINITY;
    }
    let log_c = ln_binomial(m as u64, k as u64);
    (m as f64 - 1.0) / (log_c.exp() * k as f64 * (m - k) as f64)
}

/// Kernel SHAP values per segment. The efficiency constraint
/// `Σφ = f(all) − f(none)` is imposed exactly by eliminating the last
/// coefficient.
pub fn kernel_shap_coefficients(samples: &SegmentSamples, target: usize) -> Result<Vec<f64>> {
    let m = samples.segments();
    let f0 = samples.empty[target];
    let delta = samples.full[target] - f0;
    if m == 1 {
        return Ok(vec![delta]);
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut weights = Vec::new();
    for (z, p) in samples.masks.iter().zip(&samples.outputs) {
        let k = z.iter().filter(|v| **v).count();
        if k == 0 || k == m {
            continue;
        }
        let last = if z[m - 1] { 1.0 } else { 0.0 };
        rows.push((0..m - 1).map(|j| (if z[j] { 1.0 } else { 0.0 }) - last).collect::<Vec<f64>>());
        y.push(p[target] - f0 - last * delta);
        weights.push(shapley_kernel(m, k));
    }
    if rows.is_empty() {
        return Ok(vec![delta / m as f64; m]);
    }
    let x = DMatrix::from_fn(rows.len(), m - 1, |i, j| rows[i][j]);
    let xtw = DMatrix::from_fn(m - 1, rows.len(), |j, i| rows[i][j] * weights[i]);
    let a = &xtw * &x;
    let b = &xtw * DVector::from_vec(y);
    let phi = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::invalid(format!("kernel shap regression failed: {e}")))?;
    let mut out: Vec<f64> = phi.iter().copied().collect();
    out.push(delta - out.iter().sum::<f64>());
    Ok(out)
}

pub fn lime(samples: &SegmentSamples, target: usize, params: LimeParams) -> Result<Tensor> {
    Ok(samples.to_heatmap(&lime_coefficients(samples, target, params)?))
}

pub fn kernel_shap(samples: &SegmentSamples, target: usize) -> Result<Tensor> {
    Ok(samples.to_heatmap(&kernel_shap_coefficients(samples, target)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FnClassifier;

    /// Eight vertical stripes, each its own segment, on a 8×16 image.
    fn striped() -> (Tensor, Vec<bool>, SegmentMap) {
        let (h, w) = (8, 16);
        let mut d = vec![0.0; 3 * h * w];
        let mut labels = vec![0u32; h * w];
        for p in 0..h * w {
            let s = (p % w) / 2;
            labels[p] = s as u32 + 1;
            for ch in 0..3 {
                d[ch * h * w + p] = 0.1 + 0.1 * s as f64 + 0.01 * ch as f64;
            }
        }
        let seg = SegmentMap { height: h, width: w, labels, count: 9 };
        (Tensor::new(vec![3, h, w], d).unwrap(), vec![true; h * w], seg)
    }

    fn segment_means(img: &Tensor, seg: &SegmentMap) -> Vec<f64> {
        let mut sum = vec![0.0; seg.count - 1];
        let mut cnt = vec![0.0; seg.count - 1];
        for (p, &l) in seg.labels.iter().enumerate() {
            sum[l as usize - 1] += img.data()[p];
            cnt[l as usize - 1] += 1.0;
        }
        sum.iter().zip(&cnt).map(|(s, c)| s / c).collect()
    }

    #[test]
    fn lime_recovers_linear_segment_effects() {
        let (img, fg, seg) = striped();
        let c: Vec<f64> = (0..8).map(|j| 0.05 * (j as f64 - 3.5)).collect();
        let seg2 = seg.clone();
        let c2 = c.clone();
        let clf = FnClassifier::new(2, move |x: &Tensor| {
            let v: f64 = segment_means(x, &seg2).iter().zip(&c2).map(|(m, c)| m * c).sum::<f64>() + 0.5;
            vec![v, 1.0 - v]
        });
        let samples = sample_segments(&clf, &img, &fg, &seg, 1000, 3).unwrap();
        let coef = lime_coefficients(&samples, 0, LimeParams::default()).unwrap();
        let fill = foreground_mean(&img, &fg)[0];
        let truth: Vec<f64> = segment_means(&img, &seg).iter().zip(&c).map(|(m, c)| c * (m - fill)).collect();
        for (a, t) in coef.iter().zip(&truth) {
            if t.abs() > 1e-9 {
                assert!((a - t).abs() / t.abs() < 0.05, "{a} vs {t}");
            }
        }
        let shap = kernel_shap_coefficients(&samples, 0).unwrap();
        for (a, t) in shap.iter().zip(&truth) {
            assert!((a - t).abs() < 1e-9, "{a} vs {t}");
        }
    }

    #[test]
    fn shap_is_efficient_and_pixels_follow_segments() {
        let (img, fg, seg) = striped();
        let clf = FnClassifier::new(2, |x: &Tensor| {
            let d = x.data();
            let v = (d[3] * d[12] + d[7]).tanh();
            vec![v, 1.0 - v]
        });
        let samples = sample_segments(&clf, &img, &fg, &seg, 200, 1).unwrap();
        let phi = kernel_shap_coefficients(&samples, 0).unwrap();
        let total: f64 = phi.iter().sum();
        assert!((total - (samples.full[0] - samples.empty[0])).abs() < 1e-12);
        let map = kernel_shap(&samples, 0).unwrap();
        let n = seg.labels.len();
        for p in 0..n {
            for ch in 0..3 {
                assert_eq!(map.data()[ch * n + p], phi[seg.labels[p] as usize - 1]);
            }
        }
    }

    #[test]
    fn samples_are_seeded() {
        let (img, fg, seg) = striped();
        let clf = FnClassifier::new(2, |x: &Tensor| {
            let v = x.data()[5];
            vec![v, 1.0 - v]
        });
        let a = sample_segments(&clf, &img, &fg, &seg, 50, 9).unwrap();
        let b = sample_segments(&clf, &img, &fg, &seg, 50, 9).unwrap();
        assert_eq!(a.masks, b.masks);
        assert!(a.masks[0].iter().all(|k| *k));
        let c = sample_segments(&clf, &img, &fg, &seg, 50, 10).unwrap();
        assert_ne!(a.masks, c.masks);
    }

    #[test]
    fn shapley_kernel_is_symmetric() {
        for k in 1..9 {
            assert!((shapley_kernel(10, k) - shapley_kernel(10, 10 - k)).abs() < 1e-15);
        }
        assert!((shapley_kernel(4, 1) - 3.0 / (4.0 * 3.0)).abs() < 1e-15);
    }
}
