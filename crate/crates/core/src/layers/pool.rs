use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Winning input offset for every pooled output element.
#[derive(Clone, Debug)]
pub struct ArgmaxRecord {
    input_shape: Shape,
    winners: Vec<usize>,
}

impl ArgmaxRecord {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the window
/// in row-major order.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, ArgmaxRecord)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::InvalidGeometry(format!("max-pool needs even spatial dims, got {s:?}")));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut winners = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for y in 0..oh {
            for xo in 0..ow {
                let top = base + 2 * y * s.w + 2 * xo;
                let mut best = top;
                for cand in [top + 1, top + s.w, top + s.w + 1] {
                    if data[cand] > data[best] {
                        best = cand;
                    }
                }
                out.push(data[best]);
                winners.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, ArgmaxRecord { input_shape: s, winners }))
}

/// Routes each output gradient to the element that won its window.
pub fn maxpool2x2_backward(rec: &ArgmaxRecord, d_out: &Tensor) -> Result<Tensor> {
    let s = rec.input_shape;
    let expected = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    if d_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!("d_out {:?}, expected {expected:?}", d_out.shape())));
    }
    let mut dx = Tensor::zeros_unchecked(s);
    let buf = dx.data_mut();
    for (&idx, &g) in rec.winners.iter().zip(d_out.data()) {
        buf[idx] += g;
    }
    Ok(dx)
}
