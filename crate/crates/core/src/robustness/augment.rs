//! Photometric and geometric augmentations of masked grain images.
//!
//! Photometric changes touch foreground pixels only. Geometric changes
//! resample image and mask bilinearly (mask-normalised, so the grain edge
//! does not darken) and re-derive the foreground from the warped mask.
//! Foreground values are kept in `[FOREGROUND_FLOOR, 1]` so the zero
//! background still identifies the grain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::synth::FOREGROUND_FLOOR;
use crate::error::{Error, Result};
use crate::heatmap::PooledMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationKind {
    Brightness,
    Hue,
    Saturation,
    Rotate,
    Scale,
    Translate,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 6] = [
        AugmentationKind::Brightness,
        AugmentationKind::Hue,
        AugmentationKind::Saturation,
        AugmentationKind::Rotate,
        AugmentationKind::Scale,
        AugmentationKind::Translate,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AugmentationKind::Brightness => "brightness",
            AugmentationKind::Hue => "hue",
            AugmentationKind::Saturation => "saturation",
            AugmentationKind::Rotate => "rotate",
            AugmentationKind::Scale => "scale",
            AugmentationKind::Translate => "translate",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AugmentationKind::Brightness => "Brightness",
            AugmentationKind::Hue => "Hue",
            AugmentationKind::Saturation => "Saturation",
            AugmentationKind::Rotate => "Rotate",
            AugmentationKind::Scale => "Scale",
            AugmentationKind::Translate => "Translate",
        }
    }

    /// Geometric kinds move pixels, so the reference explanation has to
    /// move with them.
    pub fn is_equivariant(self) -> bool {
        matches!(self, AugmentationKind::Rotate | AugmentationKind::Scale | AugmentationKind::Translate)
    }

    pub fn identity(self) -> f64 {
        match self {
            AugmentationKind::Scale => 1.0,
            _ => 0.0,
        }
    }

    /// Largest half-width `a` of the symmetric interval around the identity.
    ///
    /// brightness: 8-bit units added; hue: 8-bit hue units (255 = full turn);
    /// saturation: percent change; rotate: degrees; scale: zoom factor
    /// offset; translate: horizontal shift as a share of the width.
    pub fn max_half_width(self) -> f64 {
        match self {
            AugmentationKind::Brightness => 255.0,
            AugmentationKind::Hue => 127.5,
            AugmentationKind::Saturation => 100.0,
            AugmentationKind::Rotate => 180.0,
            AugmentationKind::Scale => 0.9,
            AugmentationKind::Translate => 0.5,
        }
    }

    /// `[identity − a, identity + a]`.
    pub fn interval(self, half_width: f64) -> (f64, f64) {
        (self.identity() - half_width, self.identity() + half_width)
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation `{s}`")))
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn per_pixel(image: &Tensor, foreground: &[bool], f: impl Fn([f64; 3]) -> [f64; 3]) -> Tensor {
    let (_, h, w) = image.dims();
    let n = h * w;
    let mut out = image.clone();
    let d = out.data_mut();
    for p in 0..n {
        if foreground[p] {
            let rgb = f([d[p], d[n + p], d[2 * n + p]]);
            for ch in 0..3 {
                d[ch * n + p] = rgb[ch].clamp(FOREGROUND_FLOOR, 1.0);
            }
        }
    }
    out
}

/// Inverse coordinate map of a geometric augmentation: output pixel
/// `(y, x)` samples the source at the returned position.
fn inverse_map(kind: AugmentationKind, value: f64, h: usize, w: usize) -> impl Fn(f64, f64) -> (f64, f64) {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = value.to_radians();
    let (sin, cos) = theta.sin_cos();
    let width = w as f64;
    move |y: f64, x: f64| {
        let (dy, dx) = (y - cy, x - cx);
        match kind {
            AugmentationKind::Rotate => (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx),
            AugmentationKind::Scale => (cy + dy / value, cx + dx / value),
            AugmentationKind::Translate => (y, x - value * width),
            _ => (y, x),
        }
    }
}

/// Bilinear sample of channel data with zeros outside the image.
fn sample(data: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 as isize + dy, x0 as isize + dx);
            if wy * wx == 0.0 || yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                continue;
            }
            acc += wy * wx * data[yy as usize * w + xx as usize];
        }
    }
    acc
}

/// Warps `channels` planes of size h×w masked by `foreground`. Returns the
/// warped planes (zero off the new mask) and the new mask.
fn warp(
    data: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    foreground: &[bool],
    inv: impl Fn(f64, f64) -> (f64, f64),
) -> (Vec<f64>, Vec<bool>) {
    let n = h * w;
    let mask: Vec<f64> = foreground.iter().map(|f| if *f { 1.0 } else { 0.0 }).collect();
    let masked: Vec<f64> = (0..channels * n).map(|i| data[i] * mask[i % n]).collect();
    let mut out = vec![0.0; channels * n];
    let mut fg = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = inv(y as f64, x as f64);
            let m = sample(&mask, h, w, sy, sx);
            let p = y * w + x;
            if m < 0.5 {
                continue;
            }
            fg[p] = true;
            for ch in 0..channels {
                out[ch * n + p] = sample(&masked[ch * n..(ch + 1) * n], h, w, sy, sx) / m;
            }
        }
    }
    (out, fg)
}

/// Augmented image and its foreground.
pub fn apply_augmentation(image: &Tensor, foreground: &[bool], kind: AugmentationKind, value: f64) -> Result<(Tensor, Vec<bool>)> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::invalid("augmentations need RGB images"));
    }
    let a = kind.max_half_width();
    if !((value - kind.identity()).abs() <= a + 1e-12) {
        return Err(Error::invalid(format!("{kind} value {value} outside [{}, {}]", kind.identity() - a, kind.identity() + a)));
    }
    if value == kind.identity() {
        return Ok((image.clone(), foreground.to_vec()));
    }
    let out = match kind {
        AugmentationKind::Brightness => per_pixel(image, foreground, |rgb| rgb.map(|v| v + value / 255.0)),
        AugmentationKind::Hue => per_pixel(image, foreground, |rgb| {
            let [hh, s, v] = rgb_to_hsv(rgb);
            hsv_to_rgb([hh + value * 360.0 / 255.0, s, v])
        }),
        AugmentationKind::Saturation => per_pixel(image, foreground, |rgb| {
            let [hh, s, v] = rgb_to_hsv(rgb);
            hsv_to_rgb([hh, (s * (1.0 + value / 100.0)).clamp(0.0, 1.0), v])
        }),
        AugmentationKind::Rotate | AugmentationKind::Scale | AugmentationKind::Translate => {
            let (data, fg) = warp(image.data(), 3, h, w, foreground, inverse_map(kind, value, h, w));
            let n = h * w;
            let data = data
                .iter()
                .enumerate()
                .map(|(i, v)| if fg[i % n] { v.clamp(FOREGROUND_FLOOR, 1.0) } else { 0.0 })
                .collect();
            return Ok((Tensor::new(vec![3, h, w], data)?, fg));
        }
    };
    Ok((out, foreground.to_vec()))
}

/// Moves a heatmap the way [`apply_augmentation`] moves its image; the
/// identity for photometric kinds.
pub fn augment_map(map: &PooledMap, kind: AugmentationKind, value: f64) -> PooledMap {
    if !kind.is_equivariant() || value == kind.identity() {
        return map.clone();
    }
    let (h, w) = (map.height, map.width);
    let (values, foreground) = warp(&map.values, 1, h, w, &map.foreground, inverse_map(kind, value, h, w));
    PooledMap { values, foreground, ..map.clone() }
}
