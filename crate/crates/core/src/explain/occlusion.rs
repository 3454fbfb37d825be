//! Sliding-window occlusion with a 3×3 spatial window spanning all channels.

use crate::error::Result;
use crate::nn::{Classifier, LocalForward, Model, Rect};
use crate::tensor::Tensor;

pub const WINDOW: usize = 3;

/// Per-channel mean over foreground pixels.
pub fn foreground_mean(image: &Tensor, foreground: &[bool]) -> Vec<f64> {
    let (c, h, w) = image.dims();
    let n = h * w;
    let count = foreground.iter().filter(|f| **f).count().max(1) as f64;
    (0..c)
        .map(|ch| {
            image.data()[ch * n..(ch + 1) * n]
                .iter()
                .zip(foreground)
                .filter(|(_, f)| **f)
                .map(|(v, _)| v)
                .sum::<f64>()
                / count
        })
        .collect()
}

/// Window centred on `(y, x)`, clipped to the image.
fn window(y: usize, x: usize, h: usize, w: usize) -> Rect {
    let r = WINDOW / 2;
    Rect {
        y0: y.saturating_sub(r),
        y1: (y + r + 1).min(h),
        x0: x.saturating_sub(r),
        x1: (x + r + 1).min(w),
    }
}

fn touches_foreground(rect: Rect, foreground: &[bool], w: usize) -> bool {
    (rect.y0..rect.y1).any(|y| (rect.x0..rect.x1).any(|x| foreground[y * w + x]))
}

/// Adds `delta` to every pixel of `rect` in all channels.
fn spread(out: &mut [f64], rect: Rect, delta: f64, c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                out[(ch * h + y) * w + x] += delta;
            }
        }
    }
}

/// Occlusion against any classifier; each window costs a full forward pass.
pub fn occlusion(classifier: &dyn Classifier, image: &Tensor, foreground: &[bool], target: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    let fill = foreground_mean(image, foreground);
    let p0 = classifier.probabilities(image)?[target];
    let mut out = vec![0.0; c * h * w];
    let mut scratch = image.clone();
    for y in 0..h {
        for x in 0..w {
            let rect = window(y, x, h, w);
            if !touches_foreground(rect, foreground, w) {
                continue;
            }
            let d = scratch.data_mut();
            for ch in 0..c {
                for yy in rect.y0..rect.y1 {
                    for xx in rect.x0..rect.x1 {
                        if foreground[yy * w + xx] {
                            d[(ch * h + yy) * w + xx] = fill[ch];
                        }
                    }
                }
            }
            let p = classifier.probabilities(&scratch)?[target];
            scratch.data_mut().copy_from_slice(image.data());
            spread(&mut out, rect, p0 - p, c, h, w);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Same result as [`occlusion`] for a [`Model`], recomputing only the
/// receptive field of each window.
pub fn occlusion_model(model: &Model, image: &Tensor, foreground: &[bool], target: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    let fill = foreground_mean(image, foreground);
    let mut local = LocalForward::new(model, image)?;
    let p0 = model.probabilities(image)?[target];
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let rect = window(y, x, h, w);
            if !touches_foreground(rect, foreground, w) {
                continue;
            }
            let p = local.probabilities_with_patch(rect, |ch, yy, xx, old| {
                if foreground[yy * w + xx] {
                    fill[ch]
                } else {
                    old
                }
            })[target];
            spread(&mut out, rect, p0 - p, c, h, w);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FnClassifier;

    #[test]
    fn only_windows_covering_the_read_pixel_matter() {
        let (h, w) = (8, 8);
        let (pi, pj) = (3, 5);
        let clf = FnClassifier::new(2, move |img: &Tensor| {
            let v = img.data()[pi * w + pj];
            vec![v, 1.0 - v]
        });
        let mut d = vec![0.5; 3 * h * w];
        d[pi * w + pj] = 0.9;
        let img = Tensor::new(vec![3, h, w], d).unwrap();
        let fg = vec![true; h * w];
        let out = occlusion(&clf, &img, &fg, 0).unwrap();
        let mean = foreground_mean(&img, &fg)[0];
        for y in 0..h {
            for x in 0..w {
                // pixel (y, x) is covered by windows centred within distance 1
                // of it; those windows also cover (pi, pj) iff |Δ| ≤ 2
                let near = (y as isize - pi as isize).abs() <= 2 && (x as isize - pj as isize).abs() <= 2;
                let v = out.data()[y * w + x];
                if near {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        // the read pixel itself is covered by all nine windows around it
        assert!((out.data()[pi * w + pj] - 9.0 * (0.9 - mean)).abs() < 1e-12);
    }

    #[test]
    fn incremental_matches_full_forward() {
        let small = crate::data::SynthParams { height: 24, width: 24, ..Default::default() };
        let k2 = crate::data::generate_kernel_with(4, crate::data::DefectKind::Discolor, 0.7, &small);
        let m = crate::nn::merge_batchnorm(&Model::micro_cnn(24, 24, 2, 1)).unwrap();
        let a = occlusion(&m, &k2.image, &k2.foreground, 1).unwrap();
        let b = occlusion_model(&m, &k2.image, &k2.foreground, 1).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
