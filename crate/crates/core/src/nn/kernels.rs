//! Dense linear-algebra kernels behind the layer implementations.
//!
//! All matrices are row-major. Convolutions go through `im2col` and a GEMM;
//! a transposed convolution is evaluated as the adjoint of the convolution
//! with the same geometry.

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    if beta == 0.0 {
        c.fill(0.0);
    }
    // SAFETY: slice lengths were checked above against the strides passed in.
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

/// Geometry of a zero-padded 2-D convolution from `[c_in, h_in, w_in]` to
/// `[c_out, h_out, w_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub fh: usize,
    pub fw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// Size-preserving (for stride 1) convolution of `input` to `c_out` channels.
    pub fn conv(input: [usize; 3], c_out: usize, filter: [usize; 2], stride: [usize; 2]) -> Self {
        let [c_in, h_in, w_in] = input;
        ConvGeom {
            c_in,
            h_in,
            w_in,
            c_out,
            h_out: (h_in - 1) / stride[0] + 1,
            w_out: (w_in - 1) / stride[1] + 1,
            fh: filter[0],
            fw: filter[1],
            sh: stride[0],
            sw: stride[1],
            pad_top: (filter[0] - 1) / 2,
            pad_left: (filter[1] - 1) / 2,
        }
    }

    /// Geometry of the convolution whose adjoint is a transposed convolution
    /// from `input` to `c_out` channels (upsampling by the stride).
    pub fn transposed(
        input: [usize; 3],
        c_out: usize,
        filter: [usize; 2],
        stride: [usize; 2],
    ) -> Self {
        let [c, h, w] = input;
        let g = ConvGeom::conv([c_out, h * stride[0], w * stride[1]], c, filter, stride);
        debug_assert_eq!((g.h_out, g.w_out), (h, w));
        g
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.fh * self.fw
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    #[cfg(test)]
    pub fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }
}

/// Output columns `j` whose input column `j * sw + v - pad_left` lies inside
/// `[0, w_in)`.
#[inline]
fn valid_cols(g: &ConvGeom, v: usize) -> (usize, usize) {
    let shift = g.pad_left as isize - v as isize;
    let lo = if shift > 0 { (shift as usize).div_ceil(g.sw) } else { 0 };
    let last = g.w_in as isize - 1 + shift;
    let hi = if last < 0 { 0 } else { (last as usize / g.sw + 1).min(g.w_out) };
    (lo, hi.max(lo))
}

/// Unfolds `x` (`[c_in, h_in, w_in]`) into `cols` (`[c_in*fh*fw, h_out*w_out]`).
pub(crate) fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &x[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
        for u in 0..g.fh {
            for v in 0..g.fw {
                let row = ((c * g.fh + u) * g.fw + v) * p;
                let dst = &mut cols[row..row + p];
                let (lo, hi) = valid_cols(g, v);
                for i in 0..g.h_out {
                    let yi = (i * g.sh + u) as isize - g.pad_top as isize;
                    let out = &mut dst[i * g.w_out..(i + 1) * g.w_out];
                    if yi < 0 || yi >= g.h_in as isize || lo >= hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[yi as usize * g.w_in..(yi as usize + 1) * g.w_in];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let x0 = lo * g.sw + v - g.pad_left;
                    if g.sw == 1 {
                        out[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        for (k, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[x0 + k * g.sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` into `x`, which is overwritten.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    x.fill(0.0);
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
        for u in 0..g.fh {
            for v in 0..g.fw {
                let row = ((c * g.fh + u) * g.fw + v) * p;
                let src = &cols[row..row + p];
                let (lo, hi) = valid_cols(g, v);
                if lo >= hi {
                    continue;
                }
                for i in 0..g.h_out {
                    let yi = (i * g.sh + u) as isize - g.pad_top as isize;
                    if yi < 0 || yi >= g.h_in as isize {
                        continue;
                    }
                    let dst = &mut plane[yi as usize * g.w_in..(yi as usize + 1) * g.w_in];
                    let s = &src[i * g.w_out + lo..i * g.w_out + hi];
                    let x0 = lo * g.sw + v - g.pad_left;
                    if g.sw == 1 {
                        for (d, v) in dst[x0..x0 + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (k, v) in s.iter().enumerate() {
                            dst[x0 + k * g.sw] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolutions over zero-padded planes: with the padded row width
/// `wp`, output pixel `n = i * wp + j` reads input `n + u * wp + v`, so every
/// filter tap is a single contiguous axpy. Columns `j >= w_out` are scratch.
struct Padded {
    hp: usize,
    wp: usize,
}

impl ConvGeom {
    /// Stride-1 convolutions with very few output maps skip the `im2col` buffer.
    fn use_direct(&self) -> bool {
        self.sh == 1 && self.sw == 1 && self.c_out < 4
    }

    fn padded(&self) -> Padded {
        Padded {
            hp: self.h_in + self.fh - 1,
            wp: self.w_in + self.fw - 1,
        }
    }

    /// Length of the flat output range covering all valid pixels.
    fn span(&self, p: &Padded) -> usize {
        (self.h_out - 1) * p.wp + self.w_out
    }
}

fn pad_planes(g: &ConvGeom, p: &Padded, x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let pin = g.h_in * g.w_in;
    for c in 0..g.c_in {
        for r in 0..g.h_in {
            let dst = (c * p.hp + r + g.pad_top) * p.wp + g.pad_left;
            out[dst..dst + g.w_in].copy_from_slice(&x[c * pin + r * g.w_in..c * pin + (r + 1) * g.w_in]);
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y = conv(W, x)` without bias; `weight` is `[c_out, c_in, fh, fw]`.
pub(crate) fn conv_forward(g: &ConvGeom, weight: &[f64], x: &[f64], y: &mut [f64], cols: &mut Vec<f64>) {
    if g.use_direct() {
        let p = g.padded();
        let (plen, olen, span, k) = (p.hp * p.wp, g.h_out * p.wp, g.span(&p), g.fh * g.fw);
        cols.resize(g.c_in * plen + olen, 0.0);
        let (xp, acc) = cols.split_at_mut(g.c_in * plen);
        pad_planes(g, &p, x, xp);
        for o in 0..g.c_out {
            acc.fill(0.0);
            for c in 0..g.c_in {
                let wk = &weight[(o * g.c_in + c) * k..(o * g.c_in + c + 1) * k];
                let xc = &xp[c * plen..(c + 1) * plen];
                for u in 0..g.fh {
                    for v in 0..g.fw {
                        let off = u * p.wp + v;
                        axpy(wk[u * g.fw + v], &xc[off..off + span], &mut acc[..span]);
                    }
                }
            }
            let yo = &mut y[o * g.out_pixels()..(o + 1) * g.out_pixels()];
            for i in 0..g.h_out {
                yo[i * g.w_out..(i + 1) * g.w_out].copy_from_slice(&acc[i * p.wp..i * p.wp + g.w_out]);
            }
        }
        return;
    }
    cols.resize(g.patch_len() * g.out_pixels(), 0.0);
    im2col(g, x, cols);
    gemm(g.c_out, g.patch_len(), g.out_pixels(), weight, false, cols, false, 0.0, y);
}

/// Embeds `dy` (`[c_out, h_out, w_out]`) into rows of width `wp`, zeroing
/// the scratch columns.
fn spread_rows(g: &ConvGeom, p: &Padded, dy: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let olen = g.h_out * p.wp;
    for o in 0..g.c_out {
        for i in 0..g.h_out {
            let src = &dy[o * g.out_pixels() + i * g.w_out..o * g.out_pixels() + (i + 1) * g.w_out];
            out[o * olen + i * p.wp..o * olen + i * p.wp + g.w_out].copy_from_slice(src);
        }
    }
}

/// Gradient of `<dy, conv(W, x)>` with respect to `x` (overwrites `dx`).
pub(crate) fn conv_backward_input(
    g: &ConvGeom,
    weight: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    cols: &mut Vec<f64>,
) {
    if g.use_direct() {
        let p = g.padded();
        let (plen, olen, span, k) = (p.hp * p.wp, g.h_out * p.wp, g.span(&p), g.fh * g.fw);
        cols.resize(g.c_out * olen + plen, 0.0);
        let (dyp, acc) = cols.split_at_mut(g.c_out * olen);
        spread_rows(g, &p, dy, dyp);
        let pin = g.h_in * g.w_in;
        for c in 0..g.c_in {
            acc.fill(0.0);
            for o in 0..g.c_out {
                let wk = &weight[(o * g.c_in + c) * k..(o * g.c_in + c + 1) * k];
                let d = &dyp[o * olen..o * olen + span];
                for u in 0..g.fh {
                    for v in 0..g.fw {
                        let off = u * p.wp + v;
                        axpy(wk[u * g.fw + v], d, &mut acc[off..off + span]);
                    }
                }
            }
            for r in 0..g.h_in {
                let src = (r + g.pad_top) * p.wp + g.pad_left;
                dx[c * pin + r * g.w_in..c * pin + (r + 1) * g.w_in].copy_from_slice(&acc[src..src + g.w_in]);
            }
        }
        return;
    }
    cols.resize(g.patch_len() * g.out_pixels(), 0.0);
    gemm(g.patch_len(), g.c_out, g.out_pixels(), weight, true, dy, false, 0.0, cols);
    col2im(g, cols, dx);
}

/// Accumulates the gradient of `<dy, conv(W, x)>` with respect to `W` into `dw`.
pub(crate) fn conv_backward_weight(
    g: &ConvGeom,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    cols: &mut Vec<f64>,
) {
    if g.use_direct() {
        let p = g.padded();
        let (plen, olen, span, k) = (p.hp * p.wp, g.h_out * p.wp, g.span(&p), g.fh * g.fw);
        cols.resize(g.c_in * plen + g.c_out * olen, 0.0);
        let (xp, dyp) = cols.split_at_mut(g.c_in * plen);
        pad_planes(g, &p, x, xp);
        spread_rows(g, &p, dy, dyp);
        for o in 0..g.c_out {
            let d = &dyp[o * olen..o * olen + span];
            for c in 0..g.c_in {
                let xc = &xp[c * plen..(c + 1) * plen];
                let wk = &mut dw[(o * g.c_in + c) * k..(o * g.c_in + c + 1) * k];
                for u in 0..g.fh {
                    for v in 0..g.fw {
                        let off = u * p.wp + v;
                        wk[u * g.fw + v] += d.iter().zip(&xc[off..off + span]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        return;
    }
    cols.resize(g.patch_len() * g.out_pixels(), 0.0);
    im2col(g, x, cols);
    gemm(g.c_out, g.out_pixels(), g.patch_len(), dy, false, cols, true, 1.0, dw);
}

/// Geometry of a max pool over `[c, h, w]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub fh: usize,
    pub fw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl PoolGeom {
    #[inline]
    fn argmax(&self, plane: &[f64], i: usize, j: usize) -> usize {
        let base = i * self.sh * self.w_in + j * self.sw;
        let mut best = base;
        let mut best_v = plane[base];
        for u in 0..self.fh {
            let row = base + u * self.w_in;
            for (v, &val) in plane[row..row + self.fw].iter().enumerate() {
                if val > best_v {
                    best_v = val;
                    best = row + v;
                }
            }
        }
        best
    }
}

pub(crate) fn maxpool_forward(g: &PoolGeom, x: &[f64], y: &mut [f64]) {
    let (pin, pout) = (g.h_in * g.w_in, g.h_out * g.w_out);
    for (plane, out) in x.chunks_exact(pin).zip(y.chunks_exact_mut(pout)) {
        for i in 0..g.h_out {
            for j in 0..g.w_out {
                out[i * g.w_out + j] = plane[g.argmax(plane, i, j)];
            }
        }
    }
}

/// Routes each output gradient to the (first) maximal input of its window.
pub(crate) fn maxpool_backward(g: &PoolGeom, x: &[f64], dy: &[f64], dx: &mut [f64]) {
    dx.fill(0.0);
    let (pin, pout) = (g.h_in * g.w_in, g.h_out * g.w_out);
    for ((plane, d), gin) in x.chunks_exact(pin).zip(dy.chunks_exact(pout)).zip(dx.chunks_exact_mut(pin)) {
        for i in 0..g.h_out {
            for j in 0..g.w_out {
                gin[g.argmax(plane, i, j)] += d[i * g.w_out + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_transpose_flags_match_naive() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive_matmul(m, k, n, &a, &b);
        for (at, bt) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if at { transpose(m, k, &a) } else { a.clone() };
            let bb = if bt { transpose(k, n, &b) } else { b.clone() };
            let mut c = vec![f64::NAN; m * n];
            gemm(m, k, n, &aa, at, &bb, bt, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::conv([2, 5, 4], 3, [3, 3], [2, 1]);
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64).sin()).collect();
        let cols_r: Vec<f64> = (0..g.patch_len() * g.out_pixels())
            .map(|i| (i as f64 * 1.3).cos())
            .collect();
        let mut cols = vec![0.0; cols_r.len()];
        im2col(&g, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&cols_r).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&g, &cols_r, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
