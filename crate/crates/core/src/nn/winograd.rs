//! Winograd F(2×2, 3×3) convolution for stride-1 3×3 kernels.
//!
//! Each 2×2 output tile costs 16 multiplies instead of 36: inputs are
//! gathered into 4×4 tiles and transformed (V = BᵀdB), kernels are
//! transformed once per call (U = GgGᵀ), the 16 per-position contractions
//! run as dense GEMMs over (cout × cin × tiles), and the inverse transform
//! (AᵀmA) scatters 2×2 outputs back. The result is the exact convolution
//! up to f32 rounding.

use crate::tensor::gemm_nn;

/// How the 3×3 kernel tensor is read while building U.
#[derive(Clone, Copy)]
pub enum KernelView {
    /// `w[m][c][u][v]` — ordinary forward correlation.
    Forward,
    /// `w[c][m][2-u][2-v]` — transposed channels and rotated taps, which
    /// turns the forward kernel into the input-gradient kernel.
    FlippedTransposed,
}

/// 4×4 input-tile transform V = Bᵀ·d·B, in place over a 16-float tile.
#[inline]
fn transform_input(d: &mut [f32; 16]) {
    // Columns: rows of Bᵀ applied down each of the 4 columns.
    for c in 0..4 {
        let (d0, d1, d2, d3) = (d[c], d[4 + c], d[8 + c], d[12 + c]);
        d[c] = d0 - d2;
        d[4 + c] = d1 + d2;
        d[8 + c] = d2 - d1;
        d[12 + c] = d1 - d3;
    }
    // Rows: same combination along each row.
    for r in 0..4 {
        let o = 4 * r;
        let (t0, t1, t2, t3) = (d[o], d[o + 1], d[o + 2], d[o + 3]);
        d[o] = t0 - t2;
        d[o + 1] = t1 + t2;
        d[o + 2] = t2 - t1;
        d[o + 3] = t1 - t3;
    }
}

/// 3×3 kernel transform U = G·g·Gᵀ into a 16-float tile.
#[inline]
fn transform_kernel(g: &[f32; 9], u: &mut [f32; 16]) {
    // t = G·g (4×3)
    let mut t = [0.0f32; 12];
    for c in 0..3 {
        let (g0, g1, g2) = (g[c], g[3 + c], g[6 + c]);
        t[c] = g0;
        t[3 + c] = 0.5 * (g0 + g1 + g2);
        t[6 + c] = 0.5 * (g0 - g1 + g2);
        t[9 + c] = g2;
    }
    // U = t·Gᵀ (4×4)
    for r in 0..4 {
        let (t0, t1, t2) = (t[3 * r], t[3 * r + 1], t[3 * r + 2]);
        u[4 * r] = t0;
        u[4 * r + 1] = 0.5 * (t0 + t1 + t2);
        u[4 * r + 2] = 0.5 * (t0 - t1 + t2);
        u[4 * r + 3] = t2;
    }
}

/// Inverse transform y = Aᵀ·m·A (4×4 → 2×2).
#[inline]
fn transform_output(m: &[f32; 16]) -> [f32; 4] {
    let mut t = [0.0f32; 8];
    for c in 0..4 {
        let (m0, m1, m2, m3) = (m[c], m[4 + c], m[8 + c], m[12 + c]);
        t[c] = m0 + m1 + m2;
        t[4 + c] = m1 - m2 - m3;
    }
    [
        t[0] + t[1] + t[2],
        t[1] - t[2] - t[3],
        t[4] + t[5] + t[6],
        t[5] - t[6] - t[7],
    ]
}

/// Stride-1 3×3 convolution of `x` (cin × h × w, zero padding `pt`/`pl`)
/// with `weights` viewed per `view`, producing `cout` planes of `oh` × `ow`
/// into `y` (overwriting when `accumulate` is false).
///
/// `xpad`, `v`, `m`, `u` are caller-provided scratch regions sized by
/// [`scratch_sizes`]; their prior contents are irrelevant.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3(
    x: &[f32], cin: usize, h: usize, w: usize, pt: usize, pl: usize,
    weights: &[f32], view: KernelView, cout: usize,
    oh: usize, ow: usize, y: &mut [f32], accumulate: bool,
    xpad: &mut [f32], v: &mut [f32], m: &mut [f32], u: &mut [f32],
) {
    let ty_n = oh.div_ceil(2);
    let tx_n = ow.div_ceil(2);
    let tiles = ty_n * tx_n;
    let (ph, pw) = (2 * ty_n + 2, 2 * tx_n + 2);

    // Embed the input into the zero-padded tile grid.
    xpad[..cin * ph * pw].fill(0.0);
    for ci in 0..cin {
        for iy in 0..h {
            let o = ci * ph * pw + (iy + pt) * pw + pl;
            xpad[o..o + w].copy_from_slice(&x[ci * h * w + iy * w..][..w]);
        }
    }

    // V[k][ci][t] = (Bᵀ·d·B)[k] for the 4×4 tile at (2ty, 2tx).
    for ci in 0..cin {
        let plane = &xpad[ci * ph * pw..][..ph * pw];
        for ty in 0..ty_n {
            for tx in 0..tx_n {
                let mut d = [0.0f32; 16];
                let base = 2 * ty * pw + 2 * tx;
                for r in 0..4 {
                    d[4 * r..4 * r + 4].copy_from_slice(&plane[base + r * pw..][..4]);
                }
                transform_input(&mut d);
                let t = ty * tx_n + tx;
                for (k, dv) in d.iter().enumerate() {
                    v[k * cin * tiles + ci * tiles + t] = *dv;
                }
            }
        }
    }

    // U[k][m][c] = (G·g·Gᵀ)[k].
    for mo in 0..cout {
        for ci in 0..cin {
            let mut g = [0.0f32; 9];
            match view {
                KernelView::Forward => {
                    g.copy_from_slice(&weights[(mo * cin + ci) * 9..][..9]);
                }
                KernelView::FlippedTransposed => {
                    let src = &weights[(ci * cout + mo) * 9..][..9];
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi = src[8 - i];
                    }
                }
            }
            let mut ut = [0.0f32; 16];
            transform_kernel(&g, &mut ut);
            for (k, uv) in ut.iter().enumerate() {
                u[k * cout * cin + mo * cin + ci] = *uv;
            }
        }
    }

    // M[k] = U[k] · V[k]  (cout × cin times cin × tiles).
    for k in 0..16 {
        gemm_nn(
            cout, cin, tiles, 1.0,
            &u[k * cout * cin..][..cout * cin],
            &v[k * cin * tiles..][..cin * tiles],
            0.0,
            &mut m[k * cout * tiles..][..cout * tiles],
        );
    }

    // y[mo, 2ty.., 2tx..] (+)= Aᵀ·M_tile·A, cropped at the edges.
    for mo in 0..cout {
        for ty in 0..ty_n {
            for tx in 0..tx_n {
                let t = ty * tx_n + tx;
                let mut mt = [0.0f32; 16];
                for (k, mv) in mt.iter_mut().enumerate() {
                    *mv = m[k * cout * tiles + mo * tiles + t];
                }
                let out = transform_output(&mt);
                for r in 0..2 {
                    let oy = 2 * ty + r;
                    if oy >= oh {
                        break;
                    }
                    for s in 0..2 {
                        let ox = 2 * tx + s;
                        if ox >= ow {
                            break;
                        }
                        let idx = mo * oh * ow + oy * ow + ox;
                        if accumulate {
                            y[idx] += out[2 * r + s];
                        } else {
                            y[idx] = out[2 * r + s];
                        }
                    }
                }
            }
        }
    }
}

/// Scratch lengths for [`conv3x3`]: `(xpad, v, m, u)`.
pub fn scratch_sizes(cin: usize, cout: usize, oh: usize, ow: usize) -> (usize, usize, usize, usize) {
    let tiles = oh.div_ceil(2) * ow.div_ceil(2);
    let (ph, pw) = (2 * oh.div_ceil(2) + 2, 2 * ow.div_ceil(2) + 2);
    (cin * ph * pw, 16 * cin * tiles, 16 * cout * tiles, 16 * cout * cin)
}
