//! Heatmaps, channel pooling, render normalisation, rank-based aggregation
//! across methods and PNG rendering.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::io::write_png;
use crate::error::{Error, Result};
use crate::method::MethodId;
use crate::order::{ranks, tie_keys};
use crate::rng::{stream_rng, tag};
use crate::tensor::Tensor;

/// Per-channel attribution for one image and target class.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// 3×H×W, zero outside the foreground.
    pub values: Tensor,
    pub method: MethodId,
    pub target: usize,
    pub foreground: Vec<bool>,
}

impl Heatmap {
    /// Zeroes background attributions and checks that every value is finite.
    pub fn new(mut values: Tensor, method: MethodId, target: usize, foreground: &[bool]) -> Result<Self> {
        let (_, h, w) = values.chw()?;
        if foreground.len() != h * w {
            return Err(Error::invalid("foreground mask does not match the heatmap"));
        }
        let n = h * w;
        for (i, v) in values.data_mut().iter_mut().enumerate() {
            if !foreground[i % n] {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::invalid(format!("{method} produced a non-finite attribution")));
            }
        }
        Ok(Self {
            values,
            method,
            target,
            foreground: foreground.to_vec(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dims()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Mean,
    Max,
    MaxAbs,
    L2,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::Mean, Pooling::Max, Pooling::MaxAbs, Pooling::L2];

    pub fn id(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
            Pooling::MaxAbs => "max-abs",
            Pooling::L2 => "l2",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Pooling::Mean => "mean pooling",
            Pooling::Max => "max pooling",
            Pooling::MaxAbs => "max abs pooling",
            Pooling::L2 => "l2-norm pooling",
        }
    }

    /// Whether pooled values keep the attribution sign.
    pub fn is_signed(self) -> bool {
        matches!(self, Pooling::Mean | Pooling::Max)
    }

    fn apply(self, channels: &[f64]) -> f64 {
        let c = channels.len() as f64;
        match self {
            Pooling::Mean => channels.iter().sum::<f64>() / c,
            Pooling::Max => channels.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Pooling::MaxAbs => channels.iter().fold(0.0, |m, v| m.max(v.abs())),
            Pooling::L2 => (channels.iter().map(|v| v * v).sum::<f64>() / c).sqrt(),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pooling `{s}`")))
    }
}

/// A single-channel map.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub pooling: Pooling,
    pub foreground: Vec<bool>,
}

impl PooledMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, pooling: Pooling, foreground: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || foreground.len() != height * width {
            return Err(Error::invalid("pooled map size does not match its dimensions"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pooled map has non-finite values"));
        }
        Ok(Self {
            height,
            width,
            values,
            pooling,
            foreground,
        })
    }

    pub fn signed(&self) -> bool {
        self.pooling.is_signed()
    }

    pub fn foreground_indices(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&p| self.foreground[p]).collect()
    }

    pub fn foreground_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.foreground)
            .filter(|(_, f)| **f)
            .map(|(v, _)| *v)
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.foreground)
            .map(|(v, fg)| if *fg { f(*v) } else { 0.0 })
            .collect();
        Self { values, ..self.clone() }
    }
}

pub fn pool_channels(h: &Heatmap, mode: Pooling) -> PooledMap {
    let (c, hh, ww) = h.dims();
    let n = hh * ww;
    let d = h.values.data();
    let mut buf = vec![0.0; c];
    let values = (0..n)
        .map(|p| {
            if !h.foreground[p] {
                return 0.0;
            }
            for (ch, b) in buf.iter_mut().enumerate() {
                *b = d[ch * n + p];
            }
            mode.apply(&buf)
        })
        .collect();
    PooledMap {
        height: hh,
        width: ww,
        values,
        pooling: mode,
        foreground: h.foreground.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    Max,
    Percentile99,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    PerImage,
    PerSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub statistic: Statistic,
    pub scope: Scope,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            statistic: Statistic::Percentile99,
            scope: Scope::PerImage,
        }
    }
}

/// Nearest-rank order statistic: the `⌈q·n⌉`-th smallest value.
pub fn nearest_rank(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let k = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[k - 1]
}

fn divisor(abs_values: &mut [f64], statistic: Statistic) -> f64 {
    match statistic {
        Statistic::Max => abs_values.iter().copied().fold(0.0, f64::max),
        Statistic::Percentile99 => nearest_rank(abs_values, 0.99),
    }
}

/// Scales maps into [−1, 1] by a robust magnitude of their foreground values.
pub fn normalize_for_render(maps: &[PooledMap], spec: NormalizationSpec) -> Result<Vec<PooledMap>> {
    if maps.is_empty() {
        return Err(Error::invalid("nothing to normalise"));
    }
    let abs_of = |m: &PooledMap| m.foreground_values().iter().map(|v| v.abs()).collect::<Vec<f64>>();
    let divisors: Vec<f64> = match spec.scope {
        Scope::PerImage => maps.iter().map(|m| divisor(&mut abs_of(m), spec.statistic)).collect(),
        Scope::PerSet => {
            let mut all: Vec<f64> = maps.iter().flat_map(abs_of).collect();
            vec![divisor(&mut all, spec.statistic); maps.len()]
        }
    };
    Ok(maps
        .iter()
        .zip(divisors)
        .map(|(m, d)| {
            if d > 0.0 {
                m.map(|v| (v / d).clamp(-1.0, 1.0))
            } else {
                m.map(|_| 0.0)
            }
        })
        .collect())
}

/// Foreground values mapped to standard-normal quantiles of their ranks,
/// `Φ⁻¹((r − ½)/n)`, with ties broken at random by `seed`.
pub fn rank_transform(map: &PooledMap, seed: u64) -> PooledMap {
    let idx = map.foreground_indices();
    let n = idx.len();
    let vals: Vec<f64> = idx.iter().map(|&p| map.values[p]).collect();
    let r = ranks(&vals, &tie_keys(n, seed));
    let normal = Normal::standard();
    let mut values = vec![0.0; map.values.len()];
    for (k, &p) in idx.iter().enumerate() {
        values[p] = normal.inverse_cdf((r[k] as f64 - 0.5) / n as f64);
    }
    PooledMap {
        values,
        ..map.clone()
    }
}

/// Uniform noise on [0, 1) over the foreground, zero elsewhere: the
/// reference "explainer" that knows nothing about the model.
pub fn noise_map(height: usize, width: usize, foreground: &[bool], pooling: Pooling, seed: u64) -> Result<PooledMap> {
    let mut rng = stream_rng(seed, tag::NOISE_MAP);
    let values = foreground
        .iter()
        .map(|&f| {
            let v: f64 = rng.random();
            if f {
                v
            } else {
                0.0
            }
        })
        .collect();
    PooledMap::new(height, width, values, pooling, foreground.to_vec())
}

/// Pixelwise mean of the rank-transformed maps.
pub fn aggregate(maps: &[PooledMap], seed: u64) -> Result<PooledMap> {
    if maps.len() < 2 {
        return Err(Error::invalid("aggregation needs at least two maps"));
    }
    let first = &maps[0];
    for m in &maps[1..] {
        if m.height != first.height || m.width != first.width || m.foreground != first.foreground {
            return Err(Error::invalid("aggregated maps must share shape and foreground"));
        }
        if m.signed() != first.signed() {
            return Err(Error::invalid("cannot aggregate signed and sign-less poolings together"));
        }
    }
    let mut acc = vec![0.0; first.values.len()];
    for (i, m) in maps.iter().enumerate() {
        let t = rank_transform(m, seed.wrapping_add(i as u64));
        for (a, v) in acc.iter_mut().zip(&t.values) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(PooledMap {
        values: acc,
        ..first.clone()
    })
}

/// Diverging red (−1) → white (0) → green (+1) colour of a value.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let c = |x: f64| (255.0 * x).round() as u8;
    if v < 0.0 {
        [255, c(1.0 + v), c(1.0 + v)]
    } else {
        [c(1.0 - v), 255, c(1.0 - v)]
    }
}

/// Renders a map with values in [−1, 1] as an RGB PNG; background is black.
pub fn render(map: &PooledMap, path: &Path, text: &[(&str, &str)]) -> Result<()> {
    let mut px = Vec::with_capacity(3 * map.values.len());
    for (v, fg) in map.values.iter().zip(&map.foreground) {
        px.extend_from_slice(&if *fg { colormap(*v) } else { [0, 0, 0] });
    }
    write_png(path, map.width, map.height, 3, &px, text)
}
