//! Quickshift superpixels over the joint (y, x, scaled CIELAB) space.
//!
//! Each foreground pixel gets a Gaussian density estimate, links to the
//! nearest pixel of higher density, and links longer than `max_dist` are cut.
//! The resulting trees are the segments. Background is segment 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    /// Number of ids including the background id 0.
    pub count: usize,
}

impl SegmentMap {
    pub fn foreground_segments(&self) -> usize {
        self.count.saturating_sub(1)
    }

    /// Pixel indices of each segment id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (p, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(p);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuickshiftParams {
    pub kernel_size: f64,
    pub max_dist: f64,
    pub ratio: f64,
}

impl Default for QuickshiftParams {
    fn default() -> Self {
        Self {
            kernel_size: 25.0,
            max_dist: 10.0,
            ratio: 0.5,
        }
    }
}

/// sRGB in [0, 1] to CIELAB (D65).
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.412453 * r + 0.357580 * g + 0.180423 * b) / 0.950456;
    let y = 0.212671 * r + 0.715160 * g + 0.072169 * b;
    let z = (0.019334 * r + 0.119193 * g + 0.950227 * b) / 1.088754;
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Density field and higher-density links, reusable across `max_dist` values.
pub struct QuickshiftField {
    height: usize,
    width: usize,
    foreground: Vec<bool>,
    features: Vec<[f64; 5]>,
    density: Vec<f64>,
}

impl QuickshiftField {
    pub fn new(image: &Tensor, foreground: &[bool], params: &QuickshiftParams) -> Result<Self> {
        let (c, h, w) = image.chw()?;
        if c != 3 {
            return Err(Error::invalid(format!("quickshift needs 3 channels, got {c}")));
        }
        if foreground.len() != h * w {
            return Err(Error::invalid("foreground mask does not match the image"));
        }
        if !(params.kernel_size > 0.0 && params.max_dist > 0.0 && params.ratio >= 0.0) {
            return Err(Error::invalid("quickshift needs kernel_size > 0, max_dist > 0, ratio ≥ 0"));
        }
        let d = image.data();
        let features: Vec<[f64; 5]> = (0..h * w)
            .map(|p| {
                let lab = srgb_to_lab([d[p], d[h * w + p], d[2 * h * w + p]]);
                [
                    (p / w) as f64,
                    (p % w) as f64,
                    params.ratio * lab[0],
                    params.ratio * lab[1],
                    params.ratio * lab[2],
                ]
            })
            .collect();
        let sigma = params.kernel_size;
        let radius = (3.0 * sigma).ceil() as isize;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let fg_idx: Vec<usize> = (0..h * w).filter(|&p| foreground[p]).collect();
        let mut density = vec![0.0; h * w];
        for &p in &fg_idx {
            let (py, px) = ((p / w) as isize, (p % w) as isize);
            let mut e = 0.0;
            for &q in &fg_idx {
                let (qy, qx) = ((q / w) as isize, (q % w) as isize);
                if (qy - py).abs() <= radius && (qx - px).abs() <= radius {
                    e += (-dist2(&features[p], &features[q]) * inv).exp();
                }
            }
            density[p] = e;
        }
        Ok(Self {
            height: h,
            width: w,
            foreground: foreground.to_vec(),
            features,
            density,
        })
    }

    /// Segments for one link-length cut.
    pub fn segment(&self, max_dist: f64) -> SegmentMap {
        let (h, w) = (self.height, self.width);
        let reach = max_dist.floor() as isize;
        let max2 = max_dist * max_dist;
        let mut parent: Vec<usize> = (0..h * w).collect();
        for p in 0..h * w {
            if !self.foreground[p] {
                continue;
            }
            let (py, px) = ((p / w) as isize, (p % w) as isize);
            let mut best: Option<(f64, usize)> = None;
            for qy in (py - reach).max(0)..=(py + reach).min(h as isize - 1) {
                for qx in (px - reach).max(0)..=(px + reach).min(w as isize - 1) {
                    let q = qy as usize * w + qx as usize;
                    if !self.foreground[q] || !self.higher(q, p) {
                        continue;
                    }
                    let d2 = dist2(&self.features[p], &self.features[q]);
                    if best.is_none_or(|(bd, bq)| d2 < bd || (d2 == bd && q < bq)) {
                        best = Some((d2, q));
                    }
                }
            }
            if let Some((d2, q)) = best {
                if d2 <= max2 {
                    parent[p] = q;
                }
            }
        }
        let mut labels = vec![0u32; h * w];
        let mut root_id = vec![u32::MAX; h * w];
        let mut next = 1u32;
        for p in 0..h * w {
            if !self.foreground[p] {
                continue;
            }
            let mut r = p;
            while parent[r] != r {
                r = parent[r];
            }
            if root_id[r] == u32::MAX {
                root_id[r] = next;
                next += 1;
            }
            labels[p] = root_id[r];
        }
        SegmentMap {
            height: h,
            width: w,
            labels,
            count: next as usize,
        }
    }

    /// Density order with the lower pixel index winning ties.
    fn higher(&self, q: usize, p: usize) -> bool {
        self.density[q] > self.density[p] || (self.density[q] == self.density[p] && q < p)
    }
}

fn dist2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn quickshift(image: &Tensor, foreground: &[bool], params: &QuickshiftParams) -> Result<SegmentMap> {
    Ok(QuickshiftField::new(image, foreground, params)?.segment(params.max_dist))
}

/// Quickshift, halving `max_dist` until at least `min_segments` foreground
/// segments appear or `max_halvings` is exhausted.
pub fn quickshift_with_floor(
    image: &Tensor,
    foreground: &[bool],
    params: &QuickshiftParams,
    min_segments: usize,
    max_halvings: usize,
) -> Result<SegmentMap> {
    let field = QuickshiftField::new(image, foreground, params)?;
    let mut max_dist = params.max_dist;
    let mut seg = field.segment(max_dist);
    for _ in 0..max_halvings {
        if seg.foreground_segments() >= min_segments {
            break;
        }
        max_dist /= 2.0;
        seg = field.segment(max_dist);
    }
    Ok(seg)
}

/// Writes the segment map as a grey PNG with ids spread over 0..=255.
pub fn export_png(map: &SegmentMap, path: &std::path::Path) -> Result<()> {
    let scale = if map.count > 1 { 255.0 / (map.count - 1) as f64 } else { 0.0 };
    let px: Vec<u8> = map.labels.iter().map(|&l| (l as f64 * scale).round() as u8).collect();
    crate::data::io::write_png(path, map.width, map.height, 1, &px, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(h: usize, w: usize, fg: &[bool], color: impl Fn(usize) -> [f64; 3]) -> Tensor {
        let mut d = vec![0.0; 3 * h * w];
        for p in 0..h * w {
            if fg[p] {
                let c = color(p);
                for ch in 0..3 {
                    d[ch * h * w + p] = c[ch];
                }
            }
        }
        Tensor::new(vec![3, h, w], d).unwrap()
    }

    #[test]
    fn uniform_foreground_is_one_segment() {
        let (h, w) = (16, 16);
        let fg: Vec<bool> = (0..h * w).map(|p| (4..12).contains(&(p / w)) && (3..13).contains(&(p % w))).collect();
        let img = solid(h, w, &fg, |_| [0.7, 0.6, 0.4]);
        let seg = quickshift(&img, &fg, &QuickshiftParams::default()).unwrap();
        assert_eq!(seg.count, 2);
        for p in 0..h * w {
            assert_eq!(seg.labels[p] == 0, !fg[p]);
        }
    }

    #[test]
    fn empty_foreground_is_background_only() {
        let img = Tensor::zeros(&[3, 8, 8]);
        let seg = quickshift(&img, &[false; 64], &QuickshiftParams::default()).unwrap();
        assert_eq!(seg.count, 1);
        assert!(seg.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn two_separated_colors_give_three_segments() {
        let (h, w) = (64, 64);
        let fg = vec![true; h * w];
        let img = solid(h, w, &fg, |p| if p % w < 32 { [0.9, 0.1, 0.1] } else { [0.1, 0.2, 0.9] });
        let params = QuickshiftParams::default();
        let seg = quickshift(&img, &fg, &params).unwrap();
        // every pixel is foreground, so ids 1 and 2 are the two halves
        assert_eq!(seg.count, 3);
        let left = seg.labels[0];
        for p in 0..h * w {
            assert_eq!(seg.labels[p] == left, p % w < 32);
        }
        // brute-force oracle: the cross-boundary colour distance exceeds
        // max_dist, and within each half the density maximum is unique
        let a = srgb_to_lab([0.9, 0.1, 0.1]);
        let b = srgb_to_lab([0.1, 0.2, 0.9]);
        let cd: f64 = a.iter().zip(&b).map(|(x, y)| (params.ratio * (x - y)).powi(2)).sum::<f64>().sqrt();
        assert!(cd > params.max_dist);
    }

    #[test]
    fn larger_max_dist_never_adds_segments() {
        let k = crate::data::generate_kernel(9, crate::data::DefectKind::Discolor, 0.8);
        let field = QuickshiftField::new(&k.image, &k.foreground, &QuickshiftParams::default()).unwrap();
        let mut prev = usize::MAX;
        for md in [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0] {
            let n = field.segment(md).foreground_segments();
            assert!(n <= prev, "{md}: {n} > {prev}");
            prev = n;
        }
    }

    #[test]
    fn deterministic_partition() {
        let k = crate::data::generate_kernel(2, crate::data::DefectKind::SkinPatch, 0.6);
        let a = quickshift_with_floor(&k.image, &k.foreground, &QuickshiftParams::default(), 4, 6).unwrap();
        let b = quickshift_with_floor(&k.image, &k.foreground, &QuickshiftParams::default(), 4, 6).unwrap();
        assert_eq!(a, b);
        let mut seen = vec![false; a.count];
        for (p, &l) in a.labels.iter().enumerate() {
            seen[l as usize] = true;
            assert_eq!(l == 0, !k.foreground[p]);
        }
        assert!(seen.iter().all(|s| *s));
    }
}
