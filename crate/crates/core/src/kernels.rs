//! Inner loops shared by the op implementations: small GEMM variants and the
//! im2col/col2im lowering used by convolution. Accumulation order is fixed,
//! so identical inputs always produce bit-identical outputs.

use alloc::vec;
use alloc::vec::Vec;

/// c[m,n] += sum_k a[m,k] * b[k,n]; all row-major.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for mi in 0..m {
        let a_row = &a[mi * k..mi * k + k];
        let c_row = &mut c[mi * n..mi * n + n];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..kk * n + n];
            let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
            let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
            let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
            for ni in 0..n {
                c_row[ni] += a0 * b0[ni] + a1 * b1[ni] + a2 * b2[ni] + a3 * b3[ni];
            }
            kk += 4;
        }
        while kk < k {
            let av = a_row[kk];
            let b_row = &b[kk * n..kk * n + n];
            for ni in 0..n {
                c_row[ni] += av * b_row[ni];
            }
            kk += 1;
        }
    }
}

/// c[m,n] += sum_k a[m,k] * b[n,k] (b stored transposed; rows are dotted).
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for mi in 0..m {
        let a_row = &a[mi * k..mi * k + k];
        let c_row = &mut c[mi * n..mi * n + n];
        for ni in 0..n {
            let b_row = &b[ni * k..ni * k + k];
            let mut s0 = 0.0f32;
            let mut s1 = 0.0f32;
            let mut s2 = 0.0f32;
            let mut s3 = 0.0f32;
            let mut kk = 0;
            while kk + 4 <= k {
                s0 += a_row[kk] * b_row[kk];
                s1 += a_row[kk + 1] * b_row[kk + 1];
                s2 += a_row[kk + 2] * b_row[kk + 2];
                s3 += a_row[kk + 3] * b_row[kk + 3];
                kk += 4;
            }
            let mut tail = 0.0f32;
            while kk < k {
                tail += a_row[kk] * b_row[kk];
                kk += 1;
            }
            c_row[ni] += ((s0 + s1) + (s2 + s3)) + tail;
        }
    }
}

/// c[m,n] += sum_k a[k,m] * b[k,n] (a stored transposed).
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kk in 0..k {
        let a_col = &a[kk * m..kk * m + m];
        let b_row = &b[kk * n..kk * n + n];
        for mi in 0..m {
            let av = a_col[mi];
            let c_row = &mut c[mi * n..mi * n + n];
            for ni in 0..n {
                c_row[ni] += av * b_row[ni];
            }
        }
    }
}

/// Geometry of one 2-d convolution, padding fixed to (k-1)/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeom {
    pub fn new(n: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize) -> Self {
        ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            hout: h.div_ceil(stride),
            wout: w.div_ceil(stride),
        }
    }

    /// Rows of the lowered patch matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Columns of the lowered patch matrix: one per output position.
    pub fn cols_w(&self) -> usize {
        self.n * self.hout * self.wout
    }
}

/// Lower NCHW input into the patch matrix: cols[(ci·k+kh)·k+kw][n,oh,ow].
pub(crate) fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    debug_assert_eq!(x.len(), g.n * g.cin * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch_len() * g.cols_w());
    let pad = (g.k - 1) / 2;
    let cols_w = g.cols_w();
    for ci in 0..g.cin {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ci * g.k + kh) * g.k + kw;
                let dst_base = row * cols_w;
                for n in 0..g.n {
                    let src_chan = (n * g.cin + ci) * g.h * g.w;
                    for oh in 0..g.hout {
                        let ih = (oh * g.stride + kh) as isize - pad as isize;
                        let dst = dst_base + (n * g.hout + oh) * g.wout;
                        let drow = &mut cols[dst..dst + g.wout];
                        if ih < 0 || ih >= g.h as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let src_row = src_chan + ih as usize * g.w;
                        if g.stride == 1 {
                            let off = kw as isize - pad as isize;
                            let lo = (-off).max(0) as usize;
                            let hi = (g.w as isize - off).clamp(0, g.wout as isize) as usize;
                            drow[..lo.min(g.wout)].fill(0.0);
                            if hi > lo {
                                let s0 = (src_row as isize + lo as isize + off) as usize;
                                drow[lo..hi].copy_from_slice(&x[s0..s0 + hi - lo]);
                            }
                            drow[hi.max(lo)..].fill(0.0);
                        } else {
                            for ow in 0..g.wout {
                                let iw = (ow * g.stride + kw) as isize - pad as isize;
                                drow[ow] = if iw < 0 || iw >= g.w as isize {
                                    0.0
                                } else {
                                    x[src_row + iw as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add patch-matrix gradients back onto the input.
pub(crate) fn col2im_acc(cols: &[f32], g: &ConvGeom, gx: &mut [f32]) {
    debug_assert_eq!(gx.len(), g.n * g.cin * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch_len() * g.cols_w());
    let pad = (g.k - 1) / 2;
    let cols_w = g.cols_w();
    for ci in 0..g.cin {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ci * g.k + kh) * g.k + kw;
                let src_base = row * cols_w;
                for n in 0..g.n {
                    let dst_chan = (n * g.cin + ci) * g.h * g.w;
                    for oh in 0..g.hout {
                        let ih = (oh * g.stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src = src_base + (n * g.hout + oh) * g.wout;
                        let srow = &cols[src..src + g.wout];
                        let dst_row = dst_chan + ih as usize * g.w;
                        if g.stride == 1 {
                            let off = kw as isize - pad as isize;
                            let lo = (-off).max(0) as usize;
                            let hi = (g.w as isize - off).clamp(0, g.wout as isize) as usize;
                            if hi > lo {
                                let d0 = (dst_row as isize + lo as isize + off) as usize;
                                let dst = &mut gx[d0..d0 + hi - lo];
                                for (d, s) in dst.iter_mut().zip(&srow[lo..hi]) {
                                    *d += s;
                                }
                            }
                        } else {
                            for ow in 0..g.wout {
                                let iw = (ow * g.stride + kw) as isize - pad as isize;
                                if iw >= 0 && iw < g.w as isize {
                                    gx[dst_row + iw as usize] += srow[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution; returns the output (bias added) and the patch matrix
/// so the backward pass can reuse it.
pub(crate) fn conv2d_raw(x: &[f32], w: &[f32], b: &[f32], g: &ConvGeom) -> (Vec<f32>, Vec<f32>) {
    let cols_w = g.cols_w();
    let mut cols = vec![0.0f32; g.patch_len() * cols_w];
    im2col(x, g, &mut cols);
    let mut out_om = vec![0.0f32; g.cout * cols_w];
    gemm_acc(g.cout, g.patch_len(), cols_w, w, &cols, &mut out_om);
    let plane = g.hout * g.wout;
    let mut out = vec![0.0f32; g.n * g.cout * plane];
    for n in 0..g.n {
        for o in 0..g.cout {
            let src = &out_om[o * cols_w + n * plane..o * cols_w + (n + 1) * plane];
            let dst = &mut out[(n * g.cout + o) * plane..(n * g.cout + o + 1) * plane];
            let bias = b[o];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias;
            }
        }
    }
    (out, cols)
}

/// Gradients of the convolution. `cols` is the patch matrix saved by the
/// forward pass; `want_gx` skips the input gradient for graph leaves.
pub(crate) fn conv2d_backward(
    gy: &[f32],
    w: &[f32],
    cols: &[f32],
    g: &ConvGeom,
    want_gx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let cols_w = g.cols_w();
    let plane = g.hout * g.wout;
    // [n,o,p] -> [o][n,p] so each output channel is one contiguous row
    let mut gy_om = vec![0.0f32; g.cout * cols_w];
    for n in 0..g.n {
        for o in 0..g.cout {
            let src = &gy[(n * g.cout + o) * plane..(n * g.cout + o + 1) * plane];
            gy_om[o * cols_w + n * plane..o * cols_w + (n + 1) * plane].copy_from_slice(src);
        }
    }
    let mut gb = vec![0.0f32; g.cout];
    for o in 0..g.cout {
        let mut s = 0.0f32;
        for v in &gy_om[o * cols_w..(o + 1) * cols_w] {
            s += v;
        }
        gb[o] = s;
    }
    let patch = g.patch_len();
    let mut gw = vec![0.0f32; g.cout * patch];
    gemm_nt(g.cout, cols_w, patch, &gy_om, cols, &mut gw);
    let gx = if want_gx {
        let mut gcols = vec![0.0f32; patch * cols_w];
        gemm_tn(patch, g.cout, cols_w, w, &gy_om, &mut gcols);
        let mut gx = vec![0.0f32; g.n * g.cin * g.h * g.w];
        col2im_acc(&gcols, g, &mut gx);
        Some(gx)
    } else {
        None
    };
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm_ref(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
        let mut c = vec![0.0f32; m * n];
        for mi in 0..m {
            for ki in 0..k {
                for ni in 0..n {
                    c[mi * n + ni] += a[mi * k + ki] * b[ki * n + ni];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_reference() {
        let (m, k, n) = (3, 7, 5);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.61).cos()).collect();
        let want = gemm_ref(m, k, n, &a, &b);

        let mut c = vec![0.0f32; m * n];
        gemm_acc(m, k, n, &a, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-5);
        }

        // b transposed
        let mut bt = vec![0.0f32; n * k];
        for ki in 0..k {
            for ni in 0..n {
                bt[ni * k + ki] = b[ki * n + ni];
            }
        }
        let mut c = vec![0.0f32; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-5);
        }

        // a transposed
        let mut at = vec![0.0f32; k * m];
        for mi in 0..m {
            for ki in 0..k {
                at[ki * m + mi] = a[mi * k + ki];
            }
        }
        let mut c = vec![0.0f32; m * n];
        gemm_tn(m, k, n, &at, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn im2col_matches_direct_gather() {
        let g = ConvGeom::new(2, 3, 5, 4, 1, 3, 1);
        let x: Vec<f32> = (0..g.n * g.cin * g.h * g.w).map(|i| i as f32).collect();
        let mut cols = vec![0.0f32; g.patch_len() * g.cols_w()];
        im2col(&x, &g, &mut cols);
        let pad = 1isize;
        for ci in 0..g.cin {
            for kh in 0..g.k {
                for kw in 0..g.k {
                    for n in 0..g.n {
                        for oh in 0..g.hout {
                            for ow in 0..g.wout {
                                let ih = oh as isize + kh as isize - pad;
                                let iw = ow as isize + kw as isize - pad;
                                let want = if ih < 0
                                    || iw < 0
                                    || ih >= g.h as isize
                                    || iw >= g.w as isize
                                {
                                    0.0
                                } else {
                                    x[((n * g.cin + ci) * g.h + ih as usize) * g.w + iw as usize]
                                };
                                let row = (ci * g.k + kh) * g.k + kw;
                                let col = (n * g.hout + oh) * g.wout + ow;
                                assert_eq!(cols[row * g.cols_w() + col], want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn im2col_stride2_geometry() {
        let g = ConvGeom::new(1, 1, 4, 6, 1, 3, 2);
        assert_eq!((g.hout, g.wout), (2, 3));
        let x: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let mut cols = vec![0.0f32; g.patch_len() * g.cols_w()];
        im2col(&x, &g, &mut cols);
        // center tap (kh=1, kw=1) picks the even grid points
        let row = (0 * 3 + 1) * 3 + 1;
        let base = row * g.cols_w();
        assert_eq!(&cols[base..base + 6], &[0.0, 2.0, 4.0, 12.0, 14.0, 16.0]);
    }
}
