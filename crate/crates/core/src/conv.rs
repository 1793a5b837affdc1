//! Factorized video convolutions with "same" zero padding and unit stride.
//!
//! Layouts: clips are `[N, C, T, H, W]`; spatial kernels `[Co, C, kh, kw]`
//! act per time step, temporal kernels `[Co, C, kt]` act per pixel. The
//! depthwise variant works on feature sequences `[T, D]` with one kernel row
//! per channel. All ops are cross-correlations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn odd(extent: usize, what: &str) -> Result<()> {
    if extent % 2 == 0 {
        return Err(Error::Config(format!("{what} kernel extent {extent} must be odd")));
    }
    Ok(())
}

struct Clip {
    n: usize,
    c: usize,
    t: usize,
    h: usize,
    w: usize,
}

fn clip_dims(op: &'static str, x: &Tensor, w: &Tensor, kernel_rank: usize) -> Result<(Clip, usize)> {
    let (xd, wd) = (x.dims(), w.dims());
    if xd.len() != 5 || wd.len() != kernel_rank || wd[1] != xd[1] {
        return Err(Error::shape(op, xd, wd));
    }
    Ok((
        Clip {
            n: xd[0],
            c: xd[1],
            t: xd[2],
            h: xd[3],
            w: xd[4],
        },
        wd[0],
    ))
}

pub fn conv_spatial(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (s, co) = clip_dims("conv_spatial", x, w, 4)?;
    let (kh, kw) = (w.dims()[2], w.dims()[3]);
    odd(kh, "spatial")?;
    odd(kw, "spatial")?;
    let (ph, pw) = (kh / 2, kw / 2);
    let (xs, ws) = (x.data(), w.data());
    let plane = s.h * s.w;
    let mut out = vec![0.0; s.n * co * s.t * plane];
    for n in 0..s.n {
        for o in 0..co {
            for c in 0..s.c {
                for i in 0..kh {
                    for j in 0..kw {
                        let wv = ws[((o * s.c + c) * kh + i) * kw + j];
                        if wv == 0.0 {
                            continue;
                        }
                        for t in 0..s.t {
                            let src = ((n * s.c + c) * s.t + t) * plane;
                            let dst = ((n * co + o) * s.t + t) * plane;
                            for y in 0..s.h {
                                let yy = y + i;
                                if yy < ph || yy - ph >= s.h {
                                    continue;
                                }
                                let yy = yy - ph;
                                for xcol in 0..s.w {
                                    let xx = xcol + j;
                                    if xx < pw || xx - pw >= s.w {
                                        continue;
                                    }
                                    out[dst + y * s.w + xcol] += wv * xs[src + yy * s.w + xx - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[s.n, co, s.t, s.h, s.w], out)
}

/// Gradients of `conv_spatial` with respect to input and kernel.
pub fn conv_spatial_backward(x: &Tensor, w: &Tensor, gy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (s, co) = clip_dims("conv_spatial_backward", x, w, 4)?;
    let (kh, kw) = (w.dims()[2], w.dims()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let (xs, ws, gs) = (x.data(), w.data(), gy.data());
    let plane = s.h * s.w;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for n in 0..s.n {
        for o in 0..co {
            for c in 0..s.c {
                for i in 0..kh {
                    for j in 0..kw {
                        let widx = ((o * s.c + c) * kh + i) * kw + j;
                        let wv = ws[widx];
                        let mut acc = 0.0;
                        for t in 0..s.t {
                            let src = ((n * s.c + c) * s.t + t) * plane;
                            let dst = ((n * co + o) * s.t + t) * plane;
                            for y in 0..s.h {
                                let yy = y + i;
                                if yy < ph || yy - ph >= s.h {
                                    continue;
                                }
                                let yy = yy - ph;
                                for xcol in 0..s.w {
                                    let xx = xcol + j;
                                    if xx < pw || xx - pw >= s.w {
                                        continue;
                                    }
                                    let g = gs[dst + y * s.w + xcol];
                                    let xi = src + yy * s.w + xx - pw;
                                    acc += g * xs[xi];
                                    gx[xi] += g * wv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(x.dims(), gx)?, Tensor::new(w.dims(), gw)?))
}

pub fn conv_temporal(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (s, co) = clip_dims("conv_temporal", x, w, 3)?;
    let kt = w.dims()[2];
    odd(kt, "temporal")?;
    let pt = kt / 2;
    let (xs, ws) = (x.data(), w.data());
    let plane = s.h * s.w;
    let mut out = vec![0.0; s.n * co * s.t * plane];
    for n in 0..s.n {
        for o in 0..co {
            for c in 0..s.c {
                for k in 0..kt {
                    let wv = ws[(o * s.c + c) * kt + k];
                    if wv == 0.0 {
                        continue;
                    }
                    for t in 0..s.t {
                        let tt = t + k;
                        if tt < pt || tt - pt >= s.t {
                            continue;
                        }
                        let src = ((n * s.c + c) * s.t + tt - pt) * plane;
                        let dst = ((n * co + o) * s.t + t) * plane;
                        for p in 0..plane {
                            out[dst + p] += wv * xs[src + p];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[s.n, co, s.t, s.h, s.w], out)
}

pub fn conv_temporal_backward(x: &Tensor, w: &Tensor, gy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (s, co) = clip_dims("conv_temporal_backward", x, w, 3)?;
    let kt = w.dims()[2];
    let pt = kt / 2;
    let (xs, ws, gs) = (x.data(), w.data(), gy.data());
    let plane = s.h * s.w;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for n in 0..s.n {
        for o in 0..co {
            for c in 0..s.c {
                for k in 0..kt {
                    let widx = (o * s.c + c) * kt + k;
                    let wv = ws[widx];
                    let mut acc = 0.0;
                    for t in 0..s.t {
                        let tt = t + k;
                        if tt < pt || tt - pt >= s.t {
                            continue;
                        }
                        let src = ((n * s.c + c) * s.t + tt - pt) * plane;
                        let dst = ((n * co + o) * s.t + t) * plane;
                        for p in 0..plane {
                            acc += gs[dst + p] * xs[src + p];
                            gx[src + p] += gs[dst + p] * wv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((Tensor::new(x.dims(), gx)?, Tensor::new(w.dims(), gw)?))
}

fn depthwise_dims(seq: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize)> {
    let (sd, kd) = (seq.dims(), kernels.dims());
    if sd.len() != 2 || kd.len() != 2 || kd[0] != sd[1] {
        return Err(Error::shape("depthwise_temporal_conv", sd, kd));
    }
    odd(kd[1], "depthwise temporal")?;
    Ok((sd[0], sd[1], kd[1]))
}

/// Per-channel 1D cross-correlation of `seq: [T, D]` with `kernels: [D, kt]`.
pub fn depthwise_temporal_conv(seq: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (t_len, d, kt) = depthwise_dims(seq, kernels)?;
    let pt = kt / 2;
    let (xs, ks) = (seq.data(), kernels.data());
    let mut out = vec![0.0; t_len * d];
    for t in 0..t_len {
        for k in 0..kt {
            let tt = t + k;
            if tt < pt || tt - pt >= t_len {
                continue;
            }
            let src = (tt - pt) * d;
            for ch in 0..d {
                out[t * d + ch] += ks[ch * kt + k] * xs[src + ch];
            }
        }
    }
    Tensor::new(&[t_len, d], out)
}

pub fn depthwise_temporal_conv_backward(
    seq: &Tensor,
    kernels: &Tensor,
    gy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (t_len, d, kt) = depthwise_dims(seq, kernels)?;
    let pt = kt / 2;
    let (xs, ks, gs) = (seq.data(), kernels.data(), gy.data());
    let mut gx = vec![0.0; seq.len()];
    let mut gk = vec![0.0; kernels.len()];
    for t in 0..t_len {
        for k in 0..kt {
            let tt = t + k;
            if tt < pt || tt - pt >= t_len {
                continue;
            }
            let src = (tt - pt) * d;
            for ch in 0..d {
                let g = gs[t * d + ch];
                gk[ch * kt + k] += g * xs[src + ch];
                gx[src + ch] += g * ks[ch * kt + k];
            }
        }
    }
    Ok((Tensor::new(seq.dims(), gx)?, Tensor::new(kernels.dims(), gk)?))
}
