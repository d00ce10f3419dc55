//! Batched layer kernels on flat row-major buffers. Every image tensor is
//! `channels × height × width` per sample, samples stored back to back.

use matrixmultiply::dgemm;

/// `C(m×n) = alpha·A(m×k)·B(k×n) + beta·C`, strides given as (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa.max(1) + (k - 1) * csa.max(1));
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb.max(1) + (n - 1) * csb.max(1));
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents cover every index dgemm touches, and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[b, o] = bias[o] + Σ_i input[b, i]·w[o, i]`
pub(crate) fn dense_forward(
    input: &[f64],
    batch: usize,
    w: &[f64],
    bias: &[f64],
    in_dim: usize,
    out_dim: usize,
    out: &mut [f64],
) {
    for row in out.chunks_exact_mut(out_dim) {
        row.copy_from_slice(bias);
    }
    gemm(
        batch,
        in_dim,
        out_dim,
        input,
        (in_dim, 1),
        w,
        (1, in_dim),
        1.0,
        out,
    );
}

/// Accumulates weight and bias gradients; writes the input gradient when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    input: &[f64],
    batch: usize,
    w: &[f64],
    in_dim: usize,
    out_dim: usize,
    d_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    d_in: Option<&mut [f64]>,
) {
    gemm(
        out_dim,
        batch,
        in_dim,
        d_out,
        (1, out_dim),
        input,
        (in_dim, 1),
        1.0,
        dw,
    );
    for row in d_out.chunks_exact(out_dim) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    if let Some(d_in) = d_in {
        gemm(
            batch,
            out_dim,
            in_dim,
            d_out,
            (out_dim, 1),
            w,
            (in_dim, 1),
            0.0,
            d_in,
        );
    }
}

/// Geometry of one 2D convolution on a single sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Input offset read by column row `r` at output pixel `(oy, ox)`, if inside the image.
    #[inline]
    fn source(&self, r: usize, oy: usize, ox: usize) -> Option<usize> {
        let k = self.kernel;
        let (c, rest) = (r / (k * k), r % (k * k));
        let (ky, kx) = (rest / k, rest % k);
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.height && ix < self.width).then(|| (c * self.height + iy) * self.width + ix)
    }

    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let (ow, p) = (self.out_width(), self.pixels());
        for r in 0..self.patch_len() {
            let row = &mut cols[r * p..(r + 1) * p];
            for (pix, slot) in row.iter_mut().enumerate() {
                *slot = self
                    .source(r, pix / ow, pix % ow)
                    .map_or(0.0, |i| input[i]);
            }
        }
    }

    fn col2im(&self, cols: &[f64], d_in: &mut [f64]) {
        let (ow, p) = (self.out_width(), self.pixels());
        for r in 0..self.patch_len() {
            for pix in 0..p {
                if let Some(i) = self.source(r, pix / ow, pix % ow) {
                    d_in[i] += cols[r * p + pix];
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeometry,
    input: &[f64],
    batch: usize,
    w: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let in_len = g.in_channels * g.height * g.width;
    let (r, p) = (g.patch_len(), g.pixels());
    let out_len = g.out_channels * p;
    let mut cols = vec![0.0; r * p];
    for s in 0..batch {
        g.im2col(&input[s * in_len..(s + 1) * in_len], &mut cols);
        let o = &mut out[s * out_len..(s + 1) * out_len];
        for (row, &b) in o.chunks_exact_mut(p).zip(bias) {
            row.fill(b);
        }
        gemm(g.out_channels, r, p, w, (r, 1), &cols, (p, 1), 1.0, o);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    input: &[f64],
    batch: usize,
    w: &[f64],
    d_out: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let in_len = g.in_channels * g.height * g.width;
    let (r, p) = (g.patch_len(), g.pixels());
    let out_len = g.out_channels * p;
    let mut cols = vec![0.0; r * p];
    let mut d_cols = vec![0.0; r * p];
    if let Some(d) = d_in.as_deref_mut() {
        d.fill(0.0);
    }
    for s in 0..batch {
        let x = &input[s * in_len..(s + 1) * in_len];
        let dy = &d_out[s * out_len..(s + 1) * out_len];
        g.im2col(x, &mut cols);
        gemm(g.out_channels, p, r, dy, (p, 1), &cols, (1, p), 1.0, dw);
        for (acc, row) in db.iter_mut().zip(dy.chunks_exact(p)) {
            *acc += row.iter().sum::<f64>();
        }
        if let Some(d) = d_in.as_deref_mut() {
            gemm(r, g.out_channels, p, w, (1, r), dy, (p, 1), 0.0, &mut d_cols);
            g.col2im(&d_cols, &mut d[s * in_len..(s + 1) * in_len]);
        }
    }
}

/// Geometry of a max-pool on a single sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.window) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.window) / self.stride + 1
    }
}

/// Max-pool; `argmax` receives the winning input offset (first maximum on ties).
pub(crate) fn pool_forward(
    g: &PoolGeometry,
    input: &[f64],
    batch: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let in_len = g.channels * g.height * g.width;
    let (oh, ow) = (g.out_height(), g.out_width());
    let mut o = 0;
    for s in 0..batch {
        for c in 0..g.channels {
            let plane = s * in_len + c * g.height * g.width;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = plane + oy * g.stride * g.width + ox * g.stride;
                    for ky in 0..g.window {
                        for kx in 0..g.window {
                            let i = plane + (oy * g.stride + ky) * g.width + ox * g.stride + kx;
                            if input[i] > input[best] {
                                best = i;
                            }
                        }
                    }
                    out[o] = input[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
    }
}

pub(crate) fn pool_backward(argmax: &[usize], d_out: &[f64], d_in: &mut [f64]) {
    d_in.fill(0.0);
    for (&i, &g) in argmax.iter().zip(d_out) {
        d_in[i] += g;
    }
}

/// Row-wise `x − log Σ exp(x)`.
pub(crate) fn log_softmax_forward(input: &[f64], classes: usize, out: &mut [f64]) {
    for (x, y) in input.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        for (o, v) in y.iter_mut().zip(x) {
            *o = v - log_z;
        }
    }
}

/// Backward of log-softmax given its output: `dx = g − softmax·Σg`.
pub(crate) fn log_softmax_backward(output: &[f64], d_out: &[f64], classes: usize, d_in: &mut [f64]) {
    for ((y, g), dx) in output
        .chunks_exact(classes)
        .zip(d_out.chunks_exact(classes))
        .zip(d_in.chunks_exact_mut(classes))
    {
        let total: f64 = g.iter().sum();
        for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
            *d = gv - yv.exp() * total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dense_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b, i, o) = (3, 5, 4);
        let x = random(b * i, &mut rng);
        let w = random(o * i, &mut rng);
        let bias = random(o, &mut rng);
        let mut out = vec![0.0; b * o];
        dense_forward(&x, b, &w, &bias, i, o, &mut out);
        for s in 0..b {
            for j in 0..o {
                let want: f64 = bias[j] + (0..i).map(|k| x[s * i + k] * w[j * i + k]).sum::<f64>();
                assert!((out[s * o + j] - want).abs() < 1e-14);
            }
        }
        let dy = random(b * o, &mut rng);
        let mut dw = vec![0.0; o * i];
        let mut db = vec![0.0; o];
        let mut dx = vec![0.0; b * i];
        dense_backward(&x, b, &w, i, o, &dy, &mut dw, &mut db, Some(&mut dx));
        for j in 0..o {
            for k in 0..i {
                let want: f64 = (0..b).map(|s| dy[s * o + j] * x[s * i + k]).sum();
                assert!((dw[j * i + k] - want).abs() < 1e-14);
            }
        }
        for s in 0..b {
            for k in 0..i {
                let want: f64 = (0..o).map(|j| dy[s * o + j] * w[j * i + k]).sum();
                assert!((dx[s * i + k] - want).abs() < 1e-14);
            }
        }
    }

    fn brute_conv(g: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
        let mut out = vec![0.0; g.out_channels * oh * ow];
        for co in 0..g.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..g.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                acc += w[((co * g.in_channels + ci) * k + ky) * k + kx]
                                    * x[(ci * g.height + iy as usize) * g.width + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (padding, stride) in [(0, 1), (1, 1), (2, 2)] {
            let g = ConvGeometry {
                in_channels: 2,
                out_channels: 3,
                height: 8,
                width: 8,
                kernel: 3,
                stride,
                padding,
            };
            let x = random(2 * 2 * 64, &mut rng);
            let w = random(3 * 2 * 9, &mut rng);
            let bias = random(3, &mut rng);
            let p = g.out_height() * g.out_width();
            let mut out = vec![0.0; 2 * 3 * p];
            conv_forward(&g, &x, 2, &w, &bias, &mut out);
            for s in 0..2 {
                let want = brute_conv(&g, &x[s * 128..(s + 1) * 128], &w, &bias);
                for (got, want) in out[s * 3 * p..(s + 1) * 3 * p].iter().zip(want) {
                    assert!((got - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry {
            in_channels: 2,
            out_channels: 2,
            height: 5,
            width: 5,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let x = random(50, &mut rng);
        let w = random(36, &mut rng);
        let bias = random(2, &mut rng);
        let dy = random(50, &mut rng);
        let loss = |x: &[f64], w: &[f64]| {
            let mut out = vec![0.0; 50];
            conv_forward(&g, x, 1, w, &bias, &mut out);
            out.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut dw = vec![0.0; 36];
        let mut db = vec![0.0; 2];
        let mut dx = vec![0.0; 50];
        conv_backward(&g, &x, 1, &w, &dy, &mut dw, &mut db, Some(&mut dx));
        let h = 1e-6;
        for i in 0..36 {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-7);
        }
        for i in 0..50 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn pool_picks_first_maximum() {
        let g = PoolGeometry {
            channels: 1,
            height: 2,
            width: 4,
            window: 2,
            stride: 2,
        };
        let x = [1.0, 3.0, 5.0, 5.0, 3.0, 0.0, 5.0, 2.0];
        let mut out = [0.0; 2];
        let mut arg = [0; 2];
        pool_forward(&g, &x, 1, &mut out, &mut arg);
        assert_eq!(out, [3.0, 5.0]);
        assert_eq!(arg, [1, 2]);
        let mut dx = [9.0; 8];
        pool_backward(&arg, &[1.0, 2.0], &mut dx);
        assert_eq!(dx, [0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let x = [1000.0, 1001.0, 999.0, -3.0, 0.0, 2.0];
        let mut y = [0.0; 6];
        log_softmax_forward(&x, 3, &mut y);
        for row in y.chunks(3) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
