use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// Weights `(out_c, in_c, k, k)`, one bias per output channel, and the
/// sliding-window geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    /// Fan-in scaled normal weights (`std = sqrt(2 / fan_in)`) and zero bias.
    pub fn he_normal(
        out_c: usize,
        in_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = (in_c * kernel * kernel) as f32;
        let std = (2.0 / fan_in).sqrt();
        let shape = Shape::new(out_c, in_c, kernel, kernel);
        if shape.dims().contains(&0) || stride == 0 {
            return Err(Error::InvalidConfig(format!("bad conv geometry {shape:?} stride {stride}")));
        }
        let data = (0..shape.numel()).map(|_| rng.normal(0.0, std)).collect();
        Ok(Self { weight: Tensor::from_vec(shape, data)?, bias: vec![0.0; out_c], stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }
}

/// Gradients of one layer application.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub d_input: Tensor,
    pub d_weights: Option<Tensor>,
    pub d_bias: Option<Vec<f32>>,
}

/// Output extent along one axis, or `InvalidGeometry` if the window does not
/// tile the padded input exactly.
pub fn conv_output_size(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::InvalidGeometry(format!(
            "kernel {kernel} stride {stride} padding {padding} does not tile length {len}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

struct Geometry {
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: Shape, p: &ConvParams) -> Result<Self> {
        let ws = p.weight.shape();
        if ws.h != ws.w {
            return Err(Error::InvalidGeometry(format!("non-square kernel {ws:?}")));
        }
        if p.bias.len() != ws.n {
            return Err(Error::ShapeMismatch(format!("{} biases for {} filters", p.bias.len(), ws.n)));
        }
        if x.c != ws.c {
            return Err(Error::ShapeMismatch(format!("input has {} channels, kernel expects {}", x.c, ws.c)));
        }
        let oh = conv_output_size(x.h, ws.h, p.stride, p.padding)?;
        let ow = conv_output_size(x.w, ws.w, p.stride, p.padding)?;
        Ok(Self { in_c: x.c, h: x.h, w: x.w, k: ws.h, stride: p.stride, pad: p.padding, oh, ow })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox*stride + kj - pad` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.pad as isize;
        // ox*s + off >= 0  and  ox*s + off <= w - 1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = (self.w as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, self.ow as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let (k, plane) = (self.k, self.out_plane());
        for c in 0..self.in_c {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if self.stride == 1 {
                            let start = lo + kj - self.pad;
                            line[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                line[ox] = src[ox * self.stride + kj - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], dx: &mut [f32]) {
        let (k, plane) = (self.k, self.out_plane());
        for c in 0..self.in_c {
            let dxc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * plane..(row + 1) * plane];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut dxc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in lo..hi {
                            dst[ox * self.stride + kj - self.pad] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation plus bias.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let xs = x.shape();
    let g = Geometry::new(xs, p)?;
    let out_c = p.out_channels();
    let out_shape = Shape::new(xs.n, out_c, g.oh, g.ow);
    let mut out = Tensor::zeros_unchecked(out_shape);
    let plane = g.out_plane();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; g.col_rows() * plane] };
    let w = Mat::new(p.weight.data(), out_c, g.col_rows());
    for n in 0..xs.n {
        let cols = if g.is_pointwise() {
            x.item(n)
        } else {
            g.im2col(x.item(n), &mut col);
            &col[..]
        };
        let y = out.item_mut(n);
        gemm(w, Mat::new(cols, g.col_rows(), plane), 0.0, y);
        for (o, chunk) in y.chunks_exact_mut(plane).enumerate() {
            let b = p.bias[o];
            for v in chunk {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(x: &Tensor, p: &ConvParams, d_out: &Tensor) -> Result<LayerGrads> {
    let mut dw = p.weight.zeros_like();
    let mut db = vec![0.0; p.bias.len()];
    let d_input =
        conv2d_backward_into(x, p, d_out, Some((dw.data_mut(), &mut db)), true)?.expect("input gradient requested");
    Ok(LayerGrads { d_input, d_weights: Some(dw), d_bias: Some(db) })
}

/// Accumulates parameter gradients into `param_grads` (when given) and returns
/// the input gradient when `need_input` is set.
pub(crate) fn conv2d_backward_into(
    x: &Tensor,
    p: &ConvParams,
    d_out: &Tensor,
    param_grads: Option<(&mut [f32], &mut [f32])>,
    need_input: bool,
) -> Result<Option<Tensor>> {
    let xs = x.shape();
    let g = Geometry::new(xs, p)?;
    let out_c = p.out_channels();
    let expected = Shape::new(xs.n, out_c, g.oh, g.ow);
    if d_out.shape() != expected {
        return Err(Error::ShapeMismatch(format!("d_out {:?}, expected {expected:?}", d_out.shape())));
    }
    let plane = g.out_plane();
    let rows = g.col_rows();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * plane] };
    let mut d_input = need_input.then(|| x.zeros_like());

    if let Some((dw, db)) = param_grads {
        for (o, acc) in db.iter_mut().enumerate() {
            let mut s = 0.0f64;
            for n in 0..xs.n {
                s += d_out.item(n)[o * plane..(o + 1) * plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            *acc += s as f32;
        }
        for n in 0..xs.n {
            let cols = if g.is_pointwise() {
                x.item(n)
            } else {
                g.im2col(x.item(n), &mut col);
                &col[..]
            };
            // dW (O x K) += dY (O x P) * col^T (P x K)
            gemm(Mat::new(d_out.item(n), out_c, plane), Mat::new(cols, rows, plane).t(), 1.0, dw);
        }
    }

    if let Some(dx) = d_input.as_mut() {
        let wt = Mat::new(p.weight.data(), out_c, rows).t();
        for n in 0..xs.n {
            let dy = Mat::new(d_out.item(n), out_c, plane);
            if g.is_pointwise() {
                gemm(wt, dy, 0.0, dx.item_mut(n));
            } else {
                gemm(wt, dy, 0.0, &mut col);
                g.col2im(&col, dx.item_mut(n));
            }
        }
    }
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FillSpec;

    fn params(out_c: usize, in_c: usize, k: usize, stride: usize, pad: usize, seed: u64) -> ConvParams {
        let weight = Tensor::new((out_c, in_c, k, k), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed }).unwrap();
        let bias = (0..out_c).map(|o| 0.1 * o as f32 - 0.05).collect();
        ConvParams { weight, bias, stride, padding: pad }
    }

    /// Direct nested-loop cross-correlation.
    fn naive(x: &Tensor, p: &ConvParams) -> Tensor {
        let xs = x.shape();
        let k = p.kernel();
        let oh = (xs.h + 2 * p.padding - k) / p.stride + 1;
        let ow = (xs.w + 2 * p.padding - k) / p.stride + 1;
        let mut out = Tensor::zeros((xs.n, p.out_channels(), oh, ow)).unwrap();
        for n in 0..xs.n {
            for o in 0..p.out_channels() {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = p.bias[o] as f64;
                        for c in 0..xs.c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (y * p.stride + ki) as isize - p.padding as isize;
                                    let ix = (xo * p.stride + kj) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                        continue;
                                    }
                                    s += (p.weight.at(o, c, ki, kj) * x.at(n, c, iy as usize, ix as usize)) as f64;
                                }
                            }
                        }
                        let idx = out.index(n, o, y, xo);
                        out.data_mut()[idx] = s as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::new((1, 1, 5, 5), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed: 1 }).unwrap();
        let p = ConvParams {
            weight: Tensor::new((1, 1, 1, 1), FillSpec::Constant(1.0)).unwrap(),
            bias: vec![0.0],
            stride: 1,
            padding: 0,
        };
        assert_eq!(conv2d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let x = Tensor::new((1, 2, 4, 4), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed: 1 }).unwrap();
        let p = ConvParams {
            weight: Tensor::zeros((3, 2, 3, 3)).unwrap(),
            bias: vec![0.5, -1.0, 2.0],
            stride: 1,
            padding: 1,
        };
        let y = conv2d_forward(&x, &p).unwrap();
        for o in 0..3 {
            for h in 0..4 {
                for w in 0..4 {
                    assert_eq!(y.at(0, o, h, w), p.bias[o]);
                }
            }
        }
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let x = Tensor::new((1, 1, 3, 3), FillSpec::Constant(1.0)).unwrap();
        let p = ConvParams {
            weight: Tensor::new((1, 1, 3, 3), FillSpec::Constant(1.0)).unwrap(),
            bias: vec![0.25],
            stride: 1,
            padding: 0,
        };
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 9.25);
    }

    #[test]
    fn matches_naive_for_all_geometries() {
        for &(k, s, pad, h) in &[(3, 1, 1, 6), (3, 1, 0, 7), (1, 1, 0, 5), (4, 2, 1, 8), (3, 2, 1, 9)] {
            let x = Tensor::new((2, 3, h, h), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed: h as u64 }).unwrap();
            let p = params(4, 3, k, s, pad, 11);
            let fast = conv2d_forward(&x, &p).unwrap();
            let slow = naive(&x, &p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-5, "k{k} s{s} p{pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bad_geometry_and_channels() {
        let x = Tensor::zeros((1, 2, 5, 5)).unwrap();
        assert!(matches!(conv2d_forward(&x, &params(1, 3, 3, 1, 1, 0)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(conv2d_forward(&x, &params(1, 2, 4, 2, 1, 0)), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn zero_upstream_gradient() {
        let x = Tensor::new((1, 2, 6, 6), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed: 2 }).unwrap();
        let p = params(3, 2, 3, 1, 1, 5);
        let g = conv2d_backward(&x, &p, &Tensor::zeros((1, 3, 6, 6)).unwrap()).unwrap();
        assert_eq!(g.d_input.max_abs(), 0.0);
        assert_eq!(g.d_weights.unwrap().max_abs(), 0.0);
        assert!(g.d_bias.unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn bias_gradient_is_channel_sum() {
        let x = Tensor::new((2, 2, 6, 6), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed: 2 }).unwrap();
        let p = params(3, 2, 3, 1, 1, 5);
        let d = Tensor::new((2, 3, 6, 6), FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed: 9 }).unwrap();
        let g = conv2d_backward(&x, &p, &d).unwrap();
        let db = g.d_bias.unwrap();
        for (o, &b) in db.iter().enumerate() {
            let mut s = 0.0f64;
            for n in 0..2 {
                for h in 0..6 {
                    for w in 0..6 {
                        s += d.at(n, o, h, w) as f64;
                    }
                }
            }
            assert!((b as f64 - s).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_shape_mismatch() {
        let x = Tensor::zeros((1, 2, 6, 6)).unwrap();
        let p = params(3, 2, 3, 1, 1, 5);
        assert!(matches!(conv2d_backward(&x, &p, &Tensor::zeros((1, 3, 5, 6)).unwrap()), Err(Error::ShapeMismatch(_))));
    }
}
