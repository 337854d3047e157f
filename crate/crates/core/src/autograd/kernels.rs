//! Raw forward/backward kernels on NCHW buffers.

use crate::tensor::Real;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    /// Rows of the column matrix: `c * kh * kw`.
    pub fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds `x` into a `[c*kh*kw, n*ho*wo]` column matrix.
pub fn im2col<F: Real>(x: &[F], g: &ConvGeom) -> Vec<F> {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let cols = g.n * p;
    if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 {
        let mut col = vec![F::zero(); g.c * cols];
        for n in 0..g.n {
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * p..(n * g.c + c + 1) * p];
                col[c * cols + n * p..c * cols + (n + 1) * p].copy_from_slice(src);
            }
        }
        return col;
    }
    let mut col = vec![F::zero(); g.k() * cols];
    let pad = g.pad as isize;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        let base = n * p + oy * wo;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds a column matrix back, accumulating into `dx`.
pub fn col2im<F: Real>(col: &[F], g: &ConvGeom, dx: &mut [F]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let cols = g.n * p;
    let pad = g.pad as isize;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let plane = &mut dx[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = n * p + oy * wo;
                        let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - pad;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[n, c, p]` → `[c, n*p]`.
pub fn nchw_to_cm<F: Real>(x: &[F], n: usize, c: usize, p: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]
                .copy_from_slice(&x[(ni * c + ci) * p..(ni * c + ci + 1) * p]);
        }
    }
    out
}

/// `[c, n*p]` → `[n, c, p]`.
pub fn cm_to_nchw<F: Real>(x: &[F], n: usize, c: usize, p: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[(ni * c + ci) * p..(ni * c + ci + 1) * p]
                .copy_from_slice(&x[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]);
        }
    }
    out
}

/// Row-stochastic `[out, inp]` matrix of 1-D linear interpolation weights
/// (half-pixel centers, edge clamped).
pub fn bilinear_matrix<F: Real>(inp: usize, out: usize) -> Vec<F> {
    let mut m = vec![F::zero(); out * inp];
    let scale = inp as f64 / out as f64;
    for i in 0..out {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let frac = src - i0 as f64;
        m[i * inp + i0] += F::of(1.0 - frac);
        m[i * inp + i1] += F::of(frac);
    }
    m
}

/// Per-plane instance normalization. Returns normalized values and per-plane `1/std`.
pub fn instance_norm<F: Real>(x: &[F], planes: usize, eps: f64) -> (Vec<F>, Vec<F>) {
    let m = x.len() / planes;
    let mut out = vec![F::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(planes);
    let inv_m = F::of(1.0 / m as f64);
    for (src, dst) in x.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
        let mean = src.iter().copied().sum::<F>() * inv_m;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_m;
        let is = F::one() / (var + F::of(eps)).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

/// Backward of [`instance_norm`] given normalized outputs `xhat`.
pub fn instance_norm_backward<F: Real>(g: &[F], xhat: &[F], inv_std: &[F], dx: &mut [F]) {
    let planes = inv_std.len();
    let m = g.len() / planes;
    let mf = F::of(m as f64);
    for (pi, ((gp, xp), dp)) in g
        .chunks_exact(m)
        .zip(xhat.chunks_exact(m))
        .zip(dx.chunks_exact_mut(m))
        .enumerate()
    {
        let sum_g = gp.iter().copied().sum::<F>();
        let sum_gx = gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<F>();
        let k = inv_std[pi] / mf;
        for ((d, &gv), &xv) in dp.iter_mut().zip(gp).zip(xp) {
            *d += k * (mf * gv - sum_g - xv * sum_gx);
        }
    }
}
