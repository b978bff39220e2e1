//! Bilinear upsampling by an integer factor, half-pixel ("align corners
//! off") convention.
//!
//! For output index `d` along an axis of input length `L`, all in `f32`:
//!
//! ```text
//! src = max((d + 0.5) / scale - 0.5, 0)
//! i0  = min(floor(src), L - 1)
//! i1  = min(i0 + 1, L - 1)
//! t   = src - i0
//! ```
//!
//! and the output is `(1-ty)*((1-tx)*x[i0y,i0x] + tx*x[i0y,i1x])
//! + ty*((1-tx)*x[i1y,i0x] + tx*x[i1y,i1x])`, evaluated in exactly that order.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    t0: f32,
    t1: f32,
}

fn taps(len: usize, scale: usize) -> Vec<Tap> {
    let inv = 1.0 / scale as f32;
    (0..len * scale)
        .map(|d| {
            let src = ((d as f32 + 0.5) * inv - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let t1 = src - i0 as f32;
            Tap { i0, i1, t0: 1.0 - t1, t1 }
        })
        .collect()
}

pub fn bilinear_upsample(x: &Tensor, scale: usize) -> Result<Tensor> {
    if scale == 0 {
        return Err(Error::InvalidConfig("upsampling scale must be >= 1".into()));
    }
    if scale == 1 {
        return Ok(x.clone());
    }
    let s = x.shape();
    let (ty, tx) = (taps(s.h, scale), taps(s.w, scale));
    let out_shape = Shape::new(s.n, s.c, s.h * scale, s.w * scale);
    let mut out = Vec::with_capacity(out_shape.numel());
    for src in x.data().chunks_exact(s.plane()) {
        for y in &ty {
            let r0 = &src[y.i0 * s.w..(y.i0 + 1) * s.w];
            let r1 = &src[y.i1 * s.w..(y.i1 + 1) * s.w];
            for t in &tx {
                let top = t.t0 * r0[t.i0] + t.t1 * r0[t.i1];
                let bot = t.t0 * r1[t.i0] + t.t1 * r1[t.i1];
                out.push(y.t0 * top + y.t1 * bot);
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Adjoint of [`bilinear_upsample`]: scatters each output gradient back onto
/// its four source taps.
pub fn bilinear_upsample_backward(d_out: &Tensor, input_shape: Shape, scale: usize) -> Result<Tensor> {
    if scale == 0 {
        return Err(Error::InvalidConfig("upsampling scale must be >= 1".into()));
    }
    let s = input_shape;
    let expected = Shape::new(s.n, s.c, s.h * scale, s.w * scale);
    if d_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!("d_out {:?}, expected {expected:?}", d_out.shape())));
    }
    if scale == 1 {
        return Ok(d_out.clone());
    }
    let (ty, tx) = (taps(s.h, scale), taps(s.w, scale));
    let mut dx = Tensor::zeros_unchecked(s);
    let ow = expected.w;
    for (dst, g) in dx.data_mut().chunks_exact_mut(s.plane()).zip(d_out.data().chunks_exact(expected.plane())) {
        for (oy, y) in ty.iter().enumerate() {
            for (ox, t) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = y.t0 * v;
                let bot = y.t1 * v;
                dst[y.i0 * s.w + t.i0] += t.t0 * top;
                dst[y.i0 * s.w + t.i1] += t.t1 * top;
                dst[y.i1 * s.w + t.i0] += t.t0 * bot;
                dst[y.i1 * s.w + t.i1] += t.t1 * bot;
            }
        }
    }
    Ok(dx)
}
