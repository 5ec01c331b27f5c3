//! Dense loops shared by the differentiable ops and the inference path.
//!
//! Forward kernels accumulate every output element over its reduction
//! index in a fixed order that does not depend on the number of columns,
//! so processing a sequence in pieces gives the same bits as processing
//! it whole.

use crate::scalar::{lit, sigmoid, Scalar};

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[m x n] += w[m x k] · x[k x n]`.
pub fn matmul_acc<T: Scalar>(out: &mut [T], w: &[T], x: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(w.len(), m * k);
    debug_assert_eq!(x.len(), k * n);
    for o in 0..m {
        let row = &mut out[o * n..(o + 1) * n];
        let wr = &w[o * k..(o + 1) * k];
        for (kk, &wv) in wr.iter().enumerate() {
            axpy(row, wv, &x[kk * n..(kk + 1) * n]);
        }
    }
}

/// `out[k x n] += wᵀ · g` with `w: m x k`, `g: m x n`.
pub fn matmul_tn_acc<T: Scalar>(out: &mut [T], w: &[T], g: &[T], m: usize, k: usize, n: usize) {
    for o in 0..m {
        let gr = &g[o * n..(o + 1) * n];
        for kk in 0..k {
            axpy(&mut out[kk * n..(kk + 1) * n], w[o * k + kk], gr);
        }
    }
}

/// `out[m x k] += g · xᵀ` with `g: m x n`, `x: k x n`.
pub fn matmul_nt_acc<T: Scalar>(out: &mut [T], g: &[T], x: &[T], m: usize, k: usize, n: usize) {
    for o in 0..m {
        let gr = &g[o * n..(o + 1) * n];
        for kk in 0..k {
            out[o * k + kk] += dot(gr, &x[kk * n..(kk + 1) * n]);
        }
    }
}

/// Geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub t_in: usize,
}

impl ConvGeom {
    pub fn t_out(&self) -> usize {
        (self.t_in + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one group of `x [c_in x t_in]` into `cols [(cin_g*K) x t_out]`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, group: usize, cols: &mut [T]) {
    let (k, s, p, t_in, t_out) = (g.kernel, g.stride, g.padding as isize, g.t_in as isize, g.t_out());
    for ci in 0..g.cin_g() {
        let src = &x[(group * g.cin_g() + ci) * g.t_in..][..g.t_in];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * t_out..][..t_out];
            for (t, r) in row.iter_mut().enumerate() {
                let j = (t * s) as isize + kk as isize - p;
                *r = if j >= 0 && j < t_in { src[j as usize] } else { T::zero() };
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, group: usize, gx: &mut [T]) {
    let (k, s, p, t_in, t_out) = (g.kernel, g.stride, g.padding as isize, g.t_in as isize, g.t_out());
    for ci in 0..g.cin_g() {
        let dst = &mut gx[(group * g.cin_g() + ci) * g.t_in..][..g.t_in];
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * t_out..][..t_out];
            for (t, &r) in row.iter().enumerate() {
                let j = (t * s) as isize + kk as isize - p;
                if j >= 0 && j < t_in {
                    dst[j as usize] += r;
                }
            }
        }
    }
}

/// Single-item convolution: `x [c_in x t_in]`, `w [c_out x cin_g x K]`.
pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let t_out = g.t_out();
    let mut out = vec![T::zero(); g.c_out * t_out];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * t_out..(o + 1) * t_out].fill(bv);
        }
    }
    let rows = g.cin_g() * g.kernel;
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); rows * t_out] };
    for grp in 0..g.groups {
        let wg = &w[grp * g.cout_g() * rows..(grp + 1) * g.cout_g() * rows];
        let og = &mut out[grp * g.cout_g() * t_out..(grp + 1) * g.cout_g() * t_out];
        if g.pointwise() {
            let xg = &x[grp * g.cin_g() * t_out..(grp + 1) * g.cin_g() * t_out];
            matmul_acc(og, wg, xg, g.cout_g(), rows, t_out);
        } else {
            im2col(x, g, grp, &mut cols);
            matmul_acc(og, wg, &cols, g.cout_g(), rows, t_out);
        }
    }
    out
}

/// Accumulates input, weight and bias gradients of [`conv1d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let t_out = g.t_out();
    if let Some(gb) = gb {
        for (o, b) in gb.iter_mut().enumerate() {
            *b += gout[o * t_out..(o + 1) * t_out].iter().copied().sum::<T>();
        }
    }
    let rows = g.cin_g() * g.kernel;
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); rows * t_out] };
    let mut gx = gx;
    let mut gw = gw;
    for grp in 0..g.groups {
        let go = &gout[grp * g.cout_g() * t_out..(grp + 1) * g.cout_g() * t_out];
        let wr = grp * g.cout_g() * rows..(grp + 1) * g.cout_g() * rows;
        if let Some(gw) = gw.as_deref_mut() {
            if g.pointwise() {
                let xg = &x[grp * g.cin_g() * t_out..(grp + 1) * g.cin_g() * t_out];
                matmul_nt_acc(&mut gw[wr.clone()], go, xg, g.cout_g(), rows, t_out);
            } else {
                im2col(x, g, grp, &mut cols);
                matmul_nt_acc(&mut gw[wr.clone()], go, &cols, g.cout_g(), rows, t_out);
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            if g.pointwise() {
                let gxg = &mut gx[grp * g.cin_g() * t_out..(grp + 1) * g.cin_g() * t_out];
                matmul_tn_acc(gxg, &w[wr], go, g.cout_g(), rows, t_out);
            } else {
                cols.fill(T::zero());
                matmul_tn_acc(&mut cols, &w[wr], go, g.cout_g(), rows, t_out);
                col2im(&cols, g, grp, gx);
            }
        }
    }
}

/// Geometry of a transposed convolution, weight `[c_in x c_out x K]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_in: usize,
}

impl ConvTGeom {
    pub fn t_out(&self) -> usize {
        (self.t_in - 1) * self.stride + self.kernel - 2 * self.padding
    }

    /// Per-tap weights rearranged to `[K][c_out x c_in]`.
    fn taps<T: Scalar>(&self, w: &[T]) -> Vec<Vec<T>> {
        (0..self.kernel)
            .map(|k| {
                let mut m = vec![T::zero(); self.c_out * self.c_in];
                for ci in 0..self.c_in {
                    for co in 0..self.c_out {
                        m[co * self.c_in + ci] = w[(ci * self.c_out + co) * self.kernel + k];
                    }
                }
                m
            })
            .collect()
    }
}

pub fn conv_transpose1d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvTGeom) -> Vec<T> {
    let t_out = g.t_out();
    let mut out = vec![T::zero(); g.c_out * t_out];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * t_out..(o + 1) * t_out].fill(bv);
        }
    }
    let taps = g.taps(w);
    let mut yk = vec![T::zero(); g.c_out * g.t_in];
    for (k, m) in taps.iter().enumerate() {
        yk.fill(T::zero());
        matmul_acc(&mut yk, m, x, g.c_out, g.c_in, g.t_in);
        for co in 0..g.c_out {
            for t in 0..g.t_in {
                let pos = (t * g.stride + k) as isize - g.padding as isize;
                if pos >= 0 && (pos as usize) < t_out {
                    out[co * t_out + pos as usize] += yk[co * g.t_in + t];
                }
            }
        }
    }
    out
}

pub fn conv_transpose1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvTGeom,
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let t_out = g.t_out();
    if let Some(gb) = gb {
        for (o, b) in gb.iter_mut().enumerate() {
            *b += gout[o * t_out..(o + 1) * t_out].iter().copied().sum::<T>();
        }
    }
    let taps = g.taps(w);
    let mut gk = vec![T::zero(); g.c_out * g.t_in];
    let mut gx = gx;
    let mut gw = gw;
    let mut gm = vec![T::zero(); g.c_out * g.c_in];
    for (k, m) in taps.iter().enumerate() {
        for co in 0..g.c_out {
            for t in 0..g.t_in {
                let pos = (t * g.stride + k) as isize - g.padding as isize;
                gk[co * g.t_in + t] = if pos >= 0 && (pos as usize) < t_out {
                    gout[co * t_out + pos as usize]
                } else {
                    T::zero()
                };
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            matmul_tn_acc(gx, m, &gk, g.c_out, g.c_in, g.t_in);
        }
        if let Some(gw) = gw.as_deref_mut() {
            gm.fill(T::zero());
            matmul_nt_acc(&mut gm, &gk, x, g.c_out, g.c_in, g.t_in);
            for ci in 0..g.c_in {
                for co in 0..g.c_out {
                    gw[(ci * g.c_out + co) * g.kernel + k] += gm[co * g.c_in + ci];
                }
            }
        }
    }
}

/// Per-channel causal convolution of `x [c x t]` with taps `w [c x K]`,
/// preceded by `history [c x (K-1)]` (zeros at stream start).
pub fn depthwise_causal_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    history: Option<&[T]>,
    c: usize,
    k: usize,
) -> Vec<T> {
    let t = x.len() / c;
    let mut out = vec![T::zero(); c * t];
    for ch in 0..c {
        let taps = &w[ch * k..(ch + 1) * k];
        let xs = &x[ch * t..(ch + 1) * t];
        let hist = history.map(|h| &h[ch * (k - 1)..(ch + 1) * (k - 1)]);
        let b = bias.map_or(T::zero(), |b| b[ch]);
        for (i, o) in out[ch * t..(ch + 1) * t].iter_mut().enumerate() {
            let mut acc = b;
            // tap k-1 multiplies the current sample
            for (kk, &wv) in taps.iter().enumerate() {
                let j = i as isize + kk as isize - (k as isize - 1);
                let v = if j >= 0 {
                    xs[j as usize]
                } else {
                    hist.map_or(T::zero(), |h| h[(k as isize - 1 + j) as usize])
                };
                acc += wv * v;
            }
            *o = acc;
        }
    }
    out
}

/// RMS normalisation over channels of `x [c x t]`, scaled by `gamma [c]`.
/// Returns the output and the per-column inverse RMS.
pub fn rms_norm_forward<T: Scalar>(x: &[T], gamma: &[T], c: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let t = x.len() / c;
    let mut ss = vec![T::zero(); t];
    for ch in 0..c {
        for (s, &v) in ss.iter_mut().zip(&x[ch * t..(ch + 1) * t]) {
            *s += v * v;
        }
    }
    let n = T::from_usize(c).unwrap();
    let inv: Vec<T> = ss.iter().map(|&s| T::one() / (s / n + eps).sqrt()).collect();
    let mut out = vec![T::zero(); c * t];
    for ch in 0..c {
        for i in 0..t {
            out[ch * t + i] = x[ch * t + i] * inv[i] * gamma[ch];
        }
    }
    (out, inv)
}

/// Gated linear unit over channels: first half times sigmoid of second.
pub fn glu_forward<T: Scalar>(x: &[T], c: usize) -> Vec<T> {
    let t = x.len() / c;
    let h = c / 2;
    let mut out = vec![T::zero(); h * t];
    for ch in 0..h {
        for i in 0..t {
            out[ch * t + i] = x[ch * t + i] * sigmoid(x[(ch + h) * t + i]);
        }
    }
    out
}

#[inline]
pub fn silu<T: Scalar>(v: T) -> T {
    v * sigmoid(v)
}

#[inline]
pub fn leaky_relu<T: Scalar>(v: T, slope: T) -> T {
    if v >= T::zero() {
        v
    } else {
        v * slope
    }
}

pub fn rms_eps<T: Scalar>() -> T {
    lit(1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.01).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-10);
    }

    #[test]
    fn pointwise_conv_is_matmul() {
        let g = ConvGeom { c_in: 2, c_out: 1, kernel: 1, stride: 1, padding: 0, groups: 1, t_in: 3 };
        let out = conv1d_forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[10.0, 1.0], Some(&[0.5]), &g);
        assert_eq!(out, vec![14.5, 25.5, 36.5]);
    }

    #[test]
    fn strided_padded_conv() {
        let g = ConvGeom { c_in: 1, c_out: 1, kernel: 3, stride: 2, padding: 1, groups: 1, t_in: 5 };
        let out = conv1d_forward(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 1.0, 1.0], None, &g);
        assert_eq!(out, vec![3.0, 9.0, 9.0]);
    }

    #[test]
    fn transposed_conv_scatters() {
        let g = ConvTGeom { c_in: 1, c_out: 1, kernel: 2, stride: 2, padding: 0, t_in: 2 };
        let out = conv_transpose1d_forward(&[1.0, 2.0], &[3.0, 4.0], None, &g);
        assert_eq!(out, vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn causal_conv_uses_history() {
        let out = depthwise_causal_forward(&[1.0, 2.0], &[1.0, 10.0, 100.0], None, Some(&[5.0, 7.0]), 1, 3);
        assert_eq!(out, vec![5.0 + 70.0 + 100.0, 7.0 + 10.0 + 200.0]);
    }

    #[test]
    fn forward_is_column_split_invariant() {
        let g = ConvGeom { c_in: 3, c_out: 2, kernel: 1, stride: 1, padding: 0, groups: 1, t_in: 5 };
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..6).map(|i| (i as f64 * 1.3).cos()).collect();
        let whole = conv1d_forward(&x, &w, Some(&[0.1, -0.2]), &g);
        for t in 0..5 {
            let col: Vec<f64> = (0..3).map(|c| x[c * 5 + t]).collect();
            let g1 = ConvGeom { t_in: 1, ..g };
            let one = conv1d_forward(&col, &w, Some(&[0.1, -0.2]), &g1);
            assert_eq!(one[0], whole[t]);
            assert_eq!(one[1], whole[5 + t]);
        }
    }
}
