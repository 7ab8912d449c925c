//! Convolution / pooling kernels operating on CHW feature maps.

/// Output length and leading pad for one spatial axis.
/// `same` keeps `ceil(len / stride)` outputs (TF/Keras convention),
/// `valid` keeps only fully covered windows.
pub fn axis_out(len: usize, k: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = len.div_ceil(stride);
        let total = ((out - 1) * stride + k).saturating_sub(len);
        (out, total / 2)
    } else {
        assert!(len >= k, "valid window {k} larger than input {len}");
        ((len - k) / stride + 1, 0)
    }
}

/// Scatter input patches into a (cin*kh*kw) x (oh*ow) column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
    col: &mut [f32],
) {
    let p = oh * ow;
    debug_assert_eq!(col.len(), cin * kh * kw * p);
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy as usize >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    // valid ox range: 0 <= ox*sw + kx - pl < w
                    let lo = pl.saturating_sub(kx).div_ceil(sw).min(ow);
                    let hi_excl = if w + pl > kx {
                        ((w + pl - kx - 1) / sw + 1).min(ow)
                    } else {
                        0
                    };
                    dst[..lo].fill(0.0);
                    dst[hi_excl..].fill(0.0);
                    if sw == 1 {
                        let start = lo + kx - pl;
                        dst[lo..hi_excl].copy_from_slice(&src_row[start..start + (hi_excl - lo)]);
                    } else {
                        for (ox, d) in dst[lo..hi_excl].iter_mut().enumerate() {
                            *d = src_row[(lo + ox) * sw + kx - pl];
                        }
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: accumulate column gradients back into the input map.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    col: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f32],
) {
    let p = oh * ow;
    debug_assert_eq!(dx.len(), cin * h * w);
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let lo = pl.saturating_sub(kx).div_ceil(sw).min(ow);
                    let hi_excl = if w + pl > kx {
                        ((w + pl - kx - 1) / sw + 1).min(ow)
                    } else {
                        0
                    };
                    for ox in lo..hi_excl {
                        dst_row[ox * sw + kx - pl] += src[ox];
                    }
                }
            }
        }
    }
}

/// Depthwise 3x3-style convolution, one filter per channel.
#[allow(clippy::too_many_arguments)]
pub fn dwconv_forward(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
    y: &mut [f32],
) {
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let wslice = &weights[ch * kh * kw..(ch + 1) * kh * kw];
        let out = &mut y[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pl as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        acc += plane[iy as usize * w + ix as usize] * wslice[ky * kw + kx];
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
    }
}

/// Backward pass of [`dwconv_forward`]; accumulates into `dw` and `dx`.
#[allow(clippy::too_many_arguments)]
pub fn dwconv_backward(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
    dy: &[f32],
    dw: &mut [f32],
    dx: &mut [f32],
) {
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let wslice = &weights[ch * kh * kw..(ch + 1) * kh * kw];
        let dws = &mut dw[ch * kh * kw..(ch + 1) * kh * kw];
        let douts = &dy[ch * oh * ow..(ch + 1) * oh * ow];
        let dplane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = douts[oy * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pl as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        dws[ky * kw + kx] += g * plane[idx];
                        dplane[idx] += g * wslice[ky * kw + kx];
                    }
                }
            }
        }
    }
}
