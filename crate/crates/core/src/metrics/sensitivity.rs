//! Average sensitivity: relative change of an explanation under small
//! uniform input noise, estimated by Monte Carlo.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag};
use crate::tensor::Tensor;

pub const DEFAULT_RADIUS: f64 = 0.05;
pub const DEFAULT_SAMPLES: usize = 50;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sensitivity of several explanation vectors computed together from the
/// same perturbed inputs. `explain` returns one vector per output (for
/// example one per pooling); the result has one score per output, `None`
/// where the unperturbed explanation is all zero.
pub fn avg_sensitivity_multi(
    image: &Tensor,
    foreground: &[bool],
    explain: impl Fn(&Tensor) -> Result<Vec<Vec<f64>>>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    if samples == 0 {
        return Err(Error::invalid("sensitivity needs at least one sample"));
    }
    if !(radius >= 0.0) {
        return Err(Error::invalid("sensitivity radius must be non-negative"));
    }
    let (c, h, w) = image.chw()?;
    let base = explain(image)?;
    let norms: Vec<f64> = base.iter().map(|e| l2(e)).collect();
    let mut acc = vec![0.0; base.len()];
    let mut rng = stream_rng(seed, tag::SENSITIVITY);
    let n = h * w;
    for _ in 0..samples {
        let mut x = image.clone();
        if radius > 0.0 {
            let d = x.data_mut();
            for ch in 0..c {
                for p in 0..n {
                    if foreground[p] {
                        d[ch * n + p] += rng.random_range(-radius..=radius);
                    }
                }
            }
        }
        let e = explain(&x)?;
        if e.len() != base.len() {
            return Err(Error::invalid("explanation count changed under perturbation"));
        }
        for (k, (a, b)) in base.iter().zip(&e).enumerate() {
            let diff: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            acc[k] += diff;
        }
    }
    Ok(acc
        .iter()
        .zip(&norms)
        .map(|(s, nrm)| (*nrm > 0.0).then(|| s / nrm / samples as f64))
        .collect())
}

pub fn avg_sensitivity(
    image: &Tensor,
    foreground: &[bool],
    explain: impl Fn(&Tensor) -> Result<Vec<f64>>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    avg_sensitivity_multi(image, foreground, |x| Ok(vec![explain(x)?]), radius, samples, seed)?[0]
        .ok_or_else(|| Error::undefined("explanation of the original image is all zero"))
}
