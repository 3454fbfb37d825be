//! Procedural grain-kernel images with pixel-exact defect annotations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, tag};
use crate::tensor::Tensor;

/// Smallest value a foreground channel can take, so the foreground can be
/// recovered from the pixels alone as "any channel nonzero".
pub const FOREGROUND_FLOOR: f64 = 0.02;

pub const MIN_DEFECT_FRACTION: f64 = 0.02;
pub const MAX_DEFECT_FRACTION: f64 = 0.40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    Discolor,
    SkinPatch,
}

impl DefectKind {
    pub const ALL: [DefectKind; 2] = [DefectKind::Discolor, DefectKind::SkinPatch];

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Discolor => "discolor",
            DefectKind::SkinPatch => "skin-patch",
        }
    }
}

impl std::fmt::Display for DefectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DefectKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        DefectKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::error::Error::invalid(format!("unknown defect kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Healthy,
    Defect,
}

impl Label {
    /// Class index used by the classifier.
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Defect => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Defect),
            _ => None,
        }
    }
}

/// Per-pixel annotation. Ordered so that `Negative < Neutral < Positive`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationClass {
    Negative,
    Neutral,
    Positive,
}

impl AnnotationClass {
    pub fn to_byte(self) -> u8 {
        match self {
            AnnotationClass::Negative => 0,
            AnnotationClass::Neutral => 128,
            AnnotationClass::Positive => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(AnnotationClass::Negative),
            128 => Some(AnnotationClass::Neutral),
            255 => Some(AnnotationClass::Positive),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Share of defect images that also carry a negative annotation region.
    pub negative_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            negative_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticKernel {
    /// 3×H×W, values in [0, 1], background exactly 0.
    pub image: Tensor,
    pub foreground: Vec<bool>,
    pub label: Label,
    pub annotation: Vec<AnnotationClass>,
}

impl SyntheticKernel {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn positive_mask(&self) -> Vec<bool> {
        self.annotation.iter().map(|a| *a == AnnotationClass::Positive).collect()
    }

    /// Positive annotation area as a share of the foreground.
    pub fn positive_fraction(&self) -> f64 {
        let fg = self.foreground.iter().filter(|f| **f).count();
        let pos = self.annotation.iter().filter(|a| **a == AnnotationClass::Positive).count();
        if fg == 0 {
            0.0
        } else {
            pos as f64 / fg as f64
        }
    }
}

/// Foreground of an image whose background is exactly zero.
pub fn foreground_of(image: &Tensor) -> Vec<bool> {
    let (c, h, w) = image.dims();
    let d = image.data();
    (0..h * w)
        .map(|p| (0..c).any(|ch| d[ch * h * w + p] != 0.0))
        .collect()
}

pub fn generate_kernel(seed: u64, kind: DefectKind, severity: f64) -> SyntheticKernel {
    generate_kernel_with(seed, kind, severity, &SynthParams::default())
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Rotated coordinates of pixel centre `(x, y)`.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    fn radius2(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, cx: f64, cy: f64, a: f64, b: f64) -> Ellipse {
    let angle: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Ellipse {
        cx,
        cy,
        a,
        b,
        cos: angle.cos(),
        sin: angle.sin(),
    }
}

/// Deterministic for `(seed, kind, severity, params)`. Severity is clamped to
/// [0, 1]; severity 0 yields a healthy kernel.
pub fn generate_kernel_with(
    seed: u64,
    kind: DefectKind,
    severity: f64,
    params: &SynthParams,
) -> SyntheticKernel {
    let severity = if severity.is_nan() { 0.0 } else { severity.clamp(0.0, 1.0) };
    let (h, w) = (params.height.max(8), params.width.max(8));
    let n = h * w;
    let mut rng = stream_rng(seed, tag::SYNTH);

    let angle: f64 = rng.random_range(-0.6..0.6);
    let grain = Ellipse {
        cx: w as f64 / 2.0 + rng.random_range(-0.05..0.05) * w as f64,
        cy: h as f64 / 2.0 + rng.random_range(-0.05..0.05) * h as f64,
        a: rng.random_range(0.34..0.42) * w as f64,
        b: rng.random_range(0.20..0.26) * h as f64,
        cos: angle.cos(),
        sin: angle.sin(),
    };
    let tint = rng.random_range(0.9..1.05);
    let base = [0.80 * tint, 0.66 * tint, 0.40 * tint * rng.random_range(0.9..1.1)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.005..0.012),
            )
        })
        .collect();

    let mut foreground = vec![false; n];
    let mut shade = vec![0.0; n];
    let mut pixels = vec![[0.0f64; 3]; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let r2 = grain.radius2(fx, fy);
            if r2 > 1.0 {
                continue;
            }
            foreground[p] = true;
            let (u, v) = grain.local(fx, fy);
            let s = 0.72 + 0.28 * (1.0 - r2);
            shade[p] = s;
            let texture: f64 = waves
                .iter()
                .map(|(kx, ky, ph, amp)| amp * (kx * fx + ky * fy + ph).sin())
                .sum::<f64>()
                + rng.random_range(-0.015..0.015);
            let crease = if u.abs() < 0.8 * grain.a {
                0.12 * (-(v / 1.5).powi(2)).exp()
            } else {
                0.0
            };
            for ch in 0..3 {
                pixels[p][ch] = base[ch] * s * (1.0 + texture) - crease;
            }
        }
    }
    let fg_count = foreground.iter().filter(|f| **f).count().max(1);

    // dark hard-edged mottles give every grain some colour structure
    let mottles: Vec<(Ellipse, f64)> = (0..rng.random_range(2..=5))
        .map(|_| {
            let (cx, cy) = interior_point(&mut rng, &grain, 0.8);
            let r = rng.random_range(0.35..0.6) * grain.b;
            let b = r * rng.random_range(0.6..1.0);
            (random_ellipse(&mut rng, cx, cy, r, b), rng.random_range(0.48..0.56))
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !foreground[p] {
                continue;
            }
            if let Some((_, f)) = mottles.iter().find(|(e, _)| e.radius2(x as f64 + 0.5, y as f64 + 0.5) <= 1.0) {
                for v in pixels[p].iter_mut() {
                    *v *= f;
                }
            }
        }
    }

    let mut annotation = vec![AnnotationClass::Neutral; n];
    let mut label = Label::Healthy;
    if severity > 0.0 {
        let mut region = vec![false; n];
        for _attempt in 0..50 {
            region.iter_mut().for_each(|r| *r = false);
            let blobs: Vec<Ellipse> = match kind {
                DefectKind::Discolor => {
                    let count = 1 + rng.random_range(0..=(2.0 * severity).round() as usize);
                    (0..count)
                        .map(|_| {
                            let (cx, cy) = interior_point(&mut rng, &grain, 0.6);
                            let r = (0.22 + 0.30 * severity) * grain.b;
                            let a = r * rng.random_range(0.8..1.4);
                            let b = r * rng.random_range(0.6..1.0);
                            random_ellipse(&mut rng, cx, cy, a, b)
                        })
                        .collect()
                }
                DefectKind::SkinPatch => {
                    let (cx, cy) = interior_point(&mut rng, &grain, 0.5);
                    let r = (0.35 + 0.45 * severity) * grain.b;
                    let (a1, b1) = (r * rng.random_range(1.0..1.6), r * rng.random_range(0.6..1.0));
                    let first = random_ellipse(&mut rng, cx, cy, a1, b1);
                    let off = 0.6 * r;
                    let (cx2, cy2) = (cx + rng.random_range(-off..off), cy + rng.random_range(-off..off));
                    let (a2, b2) = (r * rng.random_range(0.6..1.0), r * rng.random_range(0.5..0.9));
                    let second = random_ellipse(&mut rng, cx2, cy2, a2, b2);
                    vec![first, second]
                }
            };
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    if foreground[p] && blobs.iter().any(|e| e.radius2(fx, fy) <= 1.0) {
                        region[p] = true;
                    }
                }
            }
            let frac = region.iter().filter(|r| **r).count() as f64 / fg_count as f64;
            if (MIN_DEFECT_FRACTION..=MAX_DEFECT_FRACTION).contains(&frac) {
                break;
            }
        }
        let frac = region.iter().filter(|r| **r).count() as f64 / fg_count as f64;
        if frac > MAX_DEFECT_FRACTION {
            trim_region(&mut region, &grain, w, fg_count);
        }
        if region.iter().filter(|r| **r).count() as f64 / fg_count as f64 >= MIN_DEFECT_FRACTION {
            paint_defect(&mut pixels, &region, &shade, kind, severity, &grain, w, &mut rng);
            for (p, r) in region.iter().enumerate() {
                if *r {
                    annotation[p] = AnnotationClass::Positive;
                }
            }
            label = Label::Defect;
            if rng.random::<f64>() < params.negative_fraction {
                let (cx, cy) = interior_point(&mut rng, &grain, 0.7);
                let r = 0.35 * grain.b;
                let blob = random_ellipse(&mut rng, cx, cy, r, 0.7 * r);
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        if foreground[p]
                            && !region[p]
                            && blob.radius2(x as f64 + 0.5, y as f64 + 0.5) <= 1.0
                        {
                            annotation[p] = AnnotationClass::Negative;
                        }
                    }
                }
            }
        }
    }

    let mut data = vec![0.0; 3 * n];
    for p in 0..n {
        if !foreground[p] {
            continue;
        }
        for ch in 0..3 {
            let v = pixels[p][ch].clamp(FOREGROUND_FLOOR, 1.0);
            data[ch * n + p] = v as f32 as f64;
        }
    }
    SyntheticKernel {
        image: Tensor::from_parts(vec![3, h, w], data),
        foreground,
        label,
        annotation,
    }
}

/// A random point inside the grain at normalised radius ≤ `max_r`.
fn interior_point(rng: &mut ChaCha8Rng, grain: &Ellipse, max_r: f64) -> (f64, f64) {
    let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = max_r * rng.random::<f64>().sqrt();
    let (u, v) = (r * grain.a * t.cos(), r * grain.b * t.sin());
    (
        grain.cx + u * grain.cos - v * grain.sin,
        grain.cy + u * grain.sin + v * grain.cos,
    )
}

/// Keeps the region pixels closest to its centroid until the area bound holds.
fn trim_region(region: &mut [bool], _grain: &Ellipse, w: usize, fg_count: usize) {
    let idx: Vec<usize> = (0..region.len()).filter(|&p| region[p]).collect();
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(a, b), &p| (a + (p % w) as f64, b + (p / w) as f64));
    let (mx, my) = (sx / idx.len() as f64, sy / idx.len() as f64);
    let mut by_dist: Vec<(f64, usize)> = idx
        .iter()
        .map(|&p| (((p % w) as f64 - mx).powi(2) + ((p / w) as f64 - my).powi(2), p))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = (MAX_DEFECT_FRACTION * fg_count as f64).floor() as usize;
    for &(_, p) in &by_dist[keep..] {
        region[p] = false;
    }
}

#[allow(clippy::too_many_arguments)]
fn paint_defect(
    pixels: &mut [[f64; 3]],
    region: &[bool],
    shade: &[f64],
    kind: DefectKind,
    severity: f64,
    grain: &Ellipse,
    w: usize,
    rng: &mut ChaCha8Rng,
) {
    match kind {
        DefectKind::Discolor => {
            let pink = [0.95, 0.45, 0.62];
            let alpha = 0.35 + 0.45 * severity;
            for (p, px) in pixels.iter_mut().enumerate() {
                if region[p] {
                    let a = alpha * rng.random_range(0.85..1.0);
                    for ch in 0..3 {
                        px[ch] = (1.0 - a) * px[ch] + a * pink[ch] * shade[p];
                    }
                }
            }
        }
        DefectKind::SkinPatch => {
            let bare = [0.95, 0.90, 0.68];
            let freq = rng.random_range(2.0..3.0);
            for (p, px) in pixels.iter_mut().enumerate() {
                if region[p] {
                    let (_, v) = grain.local((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
                    let stripe = 0.05 * (v * freq).sin();
                    for ch in 0..3 {
                        px[ch] = bare[ch] * (0.85 + 0.15 * shade[p]) * (1.0 + stripe);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_zero_is_healthy() {
        for kind in [DefectKind::Discolor, DefectKind::SkinPatch] {
            let k = generate_kernel(3, kind, 0.0);
            assert_eq!(k.label, Label::Healthy);
            assert!(k.annotation.iter().all(|a| *a == AnnotationClass::Neutral));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_kernel(11, DefectKind::SkinPatch, 0.7);
        let b = generate_kernel(11, DefectKind::SkinPatch, 0.7);
        assert_eq!(a, b);
    }

    #[test]
    fn background_zero_and_foreground_recoverable() {
        let k = generate_kernel(5, DefectKind::Discolor, 0.5);
        assert_eq!(foreground_of(&k.image), k.foreground);
        let (_, h, w) = k.image.dims();
        for p in 0..h * w {
            if !k.foreground[p] {
                for ch in 0..3 {
                    assert_eq!(k.image.data()[ch * h * w + p], 0.0);
                }
                assert_eq!(k.annotation[p], AnnotationClass::Neutral);
            }
        }
    }

    #[test]
    fn discolor_raises_red_inside_the_defect() {
        let k = generate_kernel(21, DefectKind::Discolor, 1.0);
        let (_, h, w) = k.image.dims();
        let red = &k.image.data()[..h * w];
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for p in 0..h * w {
            if !k.foreground[p] {
                continue;
            }
            if k.annotation[p] == AnnotationClass::Positive {
                si += red[p];
                ni += 1;
            } else {
                so += red[p];
                no += 1;
            }
        }
        assert!(si / ni as f64 > so / no as f64);
    }

    #[test]
    fn defect_area_within_bounds() {
        for seed in 0..200 {
            for kind in [DefectKind::Discolor, DefectKind::SkinPatch] {
                let severity = (seed % 10) as f64 / 10.0 + 0.05;
                let k = generate_kernel(seed, kind, severity);
                assert_eq!(k.label, Label::Defect, "seed {seed}");
                let f = k.positive_fraction();
                assert!((MIN_DEFECT_FRACTION..=MAX_DEFECT_FRACTION).contains(&f), "seed {seed}: {f}");
            }
        }
    }
}
