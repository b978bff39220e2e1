use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tensor::{Shape, Tensor};

use super::{ConvParams, LayerGrads};

// Weights are stored (out_c, in_c, 2, 2), like every other conv. The kernels
// repack them as (2*2*out_c, in_c) so one GEMM produces all four sub-pixel
// phases: row (a*2 + b)*out_c + o holds W[o, :, a, b].
fn packed_weights(p: &ConvParams) -> Vec<f32> {
    let s = p.weight.shape();
    let (o_c, i_c) = (s.n, s.c);
    let w = p.weight.data();
    let mut packed = vec![0.0; 4 * o_c * i_c];
    for o in 0..o_c {
        for c in 0..i_c {
            for ab in 0..4 {
                packed[(ab * o_c + o) * i_c + c] = w[(o * i_c + c) * 4 + ab];
            }
        }
    }
    packed
}

fn check(x: Shape, p: &ConvParams) -> Result<()> {
    let ws = p.weight.shape();
    if !x.c.is_multiple_of(2) {
        return Err(Error::InvalidGeometry(format!("up-convolution needs an even channel count, got {}", x.c)));
    }
    if (ws.h, ws.w) != (2, 2) || p.stride != 2 || p.padding != 0 {
        return Err(Error::InvalidGeometry(format!("up-convolution needs a 2x2 stride-2 kernel, got {ws:?}")));
    }
    if ws.c != x.c || ws.n != x.c / 2 || p.bias.len() != ws.n {
        return Err(Error::ShapeMismatch(format!("kernel {ws:?} cannot halve {} channels", x.c)));
    }
    Ok(())
}

/// 2x2 transposed convolution with stride 2: doubles `h` and `w`, halves channels.
pub fn upconv2x2_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let xs = x.shape();
    check(xs, p)?;
    let (o_c, plane) = (p.out_channels(), xs.plane());
    let packed = packed_weights(p);
    let out_shape = Shape::new(xs.n, o_c, 2 * xs.h, 2 * xs.w);
    let mut out = Tensor::zeros_unchecked(out_shape);
    let mut phases = vec![0.0; 4 * o_c * plane];
    let ow = out_shape.w;
    for n in 0..xs.n {
        gemm(Mat::new(&packed, 4 * o_c, xs.c), Mat::new(x.item(n), xs.c, plane), 0.0, &mut phases);
        let y = out.item_mut(n);
        for ab in 0..4 {
            let (a, b) = (ab / 2, ab % 2);
            for o in 0..o_c {
                let src = &phases[(ab * o_c + o) * plane..(ab * o_c + o + 1) * plane];
                let dst = &mut y[o * out_shape.plane()..(o + 1) * out_shape.plane()];
                let bias = p.bias[o];
                for i in 0..xs.h {
                    let row = &mut dst[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                    for j in 0..xs.w {
                        row[2 * j + b] = src[i * xs.w + j] + bias;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn upconv2x2_backward(x: &Tensor, p: &ConvParams, d_out: &Tensor) -> Result<LayerGrads> {
    let mut dw = p.weight.zeros_like();
    let mut db = vec![0.0; p.bias.len()];
    let d_input =
        upconv2x2_backward_into(x, p, d_out, Some((dw.data_mut(), &mut db)), true)?.expect("input gradient requested");
    Ok(LayerGrads { d_input, d_weights: Some(dw), d_bias: Some(db) })
}

pub(crate) fn upconv2x2_backward_into(
    x: &Tensor,
    p: &ConvParams,
    d_out: &Tensor,
    param_grads: Option<(&mut [f32], &mut [f32])>,
    need_input: bool,
) -> Result<Option<Tensor>> {
    let xs = x.shape();
    check(xs, p)?;
    let (o_c, plane) = (p.out_channels(), xs.plane());
    let out_shape = Shape::new(xs.n, o_c, 2 * xs.h, 2 * xs.w);
    if d_out.shape() != out_shape {
        return Err(Error::ShapeMismatch(format!("d_out {:?}, expected {out_shape:?}", d_out.shape())));
    }
    let ow = out_shape.w;
    let mut gathered = vec![0.0; 4 * o_c * plane];
    let packed = need_input.then(|| packed_weights(p));
    let mut d_packed = param_grads.as_ref().map(|_| vec![0.0; 4 * o_c * xs.c]);
    let mut bias_acc = vec![0.0f64; o_c];
    let mut d_input = need_input.then(|| x.zeros_like());

    for n in 0..xs.n {
        let dy = d_out.item(n);
        for ab in 0..4 {
            let (a, b) = (ab / 2, ab % 2);
            for o in 0..o_c {
                let src = &dy[o * out_shape.plane()..(o + 1) * out_shape.plane()];
                let dst = &mut gathered[(ab * o_c + o) * plane..(ab * o_c + o + 1) * plane];
                for i in 0..xs.h {
                    let row = &src[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                    for j in 0..xs.w {
                        dst[i * xs.w + j] = row[2 * j + b];
                    }
                }
            }
        }
        if let Some(dp) = d_packed.as_mut() {
            gemm(Mat::new(&gathered, 4 * o_c, plane), Mat::new(x.item(n), xs.c, plane).t(), 1.0, dp);
            for (o, acc) in bias_acc.iter_mut().enumerate() {
                *acc += dy[o * out_shape.plane()..(o + 1) * out_shape.plane()].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        if let (Some(dx), Some(pk)) = (d_input.as_mut(), packed.as_ref()) {
            gemm(Mat::new(pk, 4 * o_c, xs.c).t(), Mat::new(&gathered, 4 * o_c, plane), 0.0, dx.item_mut(n));
        }
    }

    if let (Some((dw, db)), Some(dp)) = (param_grads, d_packed) {
        for o in 0..o_c {
            for c in 0..xs.c {
                for ab in 0..4 {
                    dw[(o * xs.c + c) * 4 + ab] += dp[(ab * o_c + o) * xs.c + c];
                }
            }
        }
        for (acc, s) in db.iter_mut().zip(bias_acc) {
            *acc += s as f32;
        }
    }
    Ok(d_input)
}
