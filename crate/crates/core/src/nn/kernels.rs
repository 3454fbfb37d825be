//! Stride-1 2-D convolution kernels built on im2col + GEMM.

/// `c = a · b` (or `c += a · b` when `accumulate`), with explicit row/column
/// strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(m == 0 || k == 0 || a.len() >= (m - 1) * rsa as usize + (k - 1) * csa as usize + 1);
    assert!(k == 0 || n == 0 || b.len() >= (k - 1) * rsb as usize + (n - 1) * csb as usize + 1);
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfolds `input` (C×H×W) into a `(C·k·k) × (H'·W')` column matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let mut col = vec![0.0; g.patch_len() * p];
    let pad = g.padding as isize;
    for c in 0..g.in_ch {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    let shift = kx as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((g.width as isize - shift).min(ow as isize)).max(0) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + shift) as usize;
                        dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds a column matrix back onto a C×H×W image,
/// summing overlapping contributions.
pub(crate) fn col2im(col: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let mut out = vec![0.0; g.in_ch * g.height * g.width];
    let pad = g.padding as isize;
    for c in 0..g.in_ch {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    let shift = kx as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((g.width as isize - shift).min(ow as isize)).max(0) as usize;
                    for ox in lo..hi {
                        dst_row[(ox as isize + shift) as usize] += src_row[ox];
                    }
                }
            }
        }
    }
    out
}

/// `out[o] = Σ W[o, ·] · patch + bias[o]` for every output pixel.
pub(crate) fn conv_forward(
    input: &[f64],
    g: &ConvGeometry,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_ch: usize,
) -> Vec<f64> {
    let col = im2col(input, g);
    let k = g.patch_len();
    let p = g.out_pixels();
    let mut out = vec![0.0; out_ch * p];
    if let Some(bias) = bias {
        for (o, b) in bias.iter().enumerate() {
            out[o * p..(o + 1) * p].fill(*b);
        }
    }
    gemm(
        out_ch,
        k,
        p,
        weight,
        (k as isize, 1),
        &col,
        (p as isize, 1),
        &mut out,
        bias.is_some(),
    );
    out
}

/// Transposed convolution: gradient of `Σ grad_out · conv(x)` with respect
/// to `x`.
pub(crate) fn conv_transpose(
    grad_out: &[f64],
    g: &ConvGeometry,
    weight: &[f64],
    out_ch: usize,
) -> Vec<f64> {
    let k = g.patch_len();
    let p = g.out_pixels();
    let mut col = vec![0.0; k * p];
    // Wᵀ (k × out_ch) · G (out_ch × p)
    gemm(
        k,
        out_ch,
        p,
        weight,
        (1, k as isize),
        grad_out,
        (p as isize, 1),
        &mut col,
        false,
    );
    col2im(&col, g)
}

/// Accumulates weight and bias gradients of a convolution.
pub(crate) fn conv_param_grad(
    input: &[f64],
    g: &ConvGeometry,
    grad_out: &[f64],
    out_ch: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let col = im2col(input, g);
    let k = g.patch_len();
    let p = g.out_pixels();
    // G (out_ch × p) · colᵀ (p × k)
    gemm(
        out_ch,
        p,
        k,
        grad_out,
        (p as isize, 1),
        &col,
        (1, p as isize),
        grad_weight,
        true,
    );
    for o in 0..out_ch {
        grad_bias[o] += grad_out[o * p..(o + 1) * p].iter().sum::<f64>();
    }
}
