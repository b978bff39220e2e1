//! Dense NCHW tensors of `f32`.
//!
//! Layout is fixed: row-major with `w` fastest, then `h`, `c`, `n`.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Shape::new(n, c, h, w)
    }
}

/// How to initialize a new tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FillSpec {
    Constant(f32),
    SeededUniform { lo: f32, hi: f32, seed: u64 },
    SeededNormal { mean: f32, std: f32, seed: u64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

fn check_shape(shape: Shape) -> Result<()> {
    if shape.dims().contains(&0) {
        return Err(Error::InvalidShape(format!("all dimensions must be >= 1, got {shape:?}")));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, fill: FillSpec) -> Result<Self> {
        let shape = shape.into();
        check_shape(shape)?;
        let len = shape.numel();
        let data = match fill {
            FillSpec::Constant(v) => vec![v; len],
            FillSpec::SeededUniform { lo, hi, seed } => {
                let mut rng = Rng::new(seed);
                (0..len).map(|_| rng.uniform(lo, hi)).collect()
            }
            FillSpec::SeededNormal { mean, std, seed } => {
                let mut rng = Rng::new(seed);
                (0..len).map(|_| rng.normal(mean, std)).collect()
            }
        };
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::new(shape, FillSpec::Constant(0.0))
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        check_shape(shape)?;
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!("{} values do not fill shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Zero tensor with the same shape. Infallible since `self` is valid.
    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape, data: vec![0.0; self.data.len()] }
    }

    pub(crate) fn zeros_unchecked(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.numel()] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.shape.item();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Batch items `start..start + count` as a new tensor.
    pub fn batch_range(&self, start: usize, count: usize) -> Result<Tensor> {
        if count == 0 || start + count > self.shape.n {
            return Err(Error::InvalidShape(format!(
                "batch range {start}..{} outside {:?}",
                start + count,
                self.shape
            )));
        }
        let item = self.shape.item();
        let shape = Shape { n: count, ..self.shape };
        Ok(Tensor { shape, data: self.data[start * item..(start + count) * item].to_vec() })
    }

    /// Stacks tensors along the batch axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape("nothing to stack".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut n = 0;
        for p in parts {
            let ps = p.shape;
            if (ps.c, ps.h, ps.w) != (s.c, s.h, s.w) {
                return Err(Error::ShapeMismatch(format!("cannot stack {ps:?} onto {s:?}")));
            }
            n += ps.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: Shape { n, ..s }, data })
    }

    /// The first `count` channels of every batch item.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Tensor> {
        let s = self.shape;
        if count == 0 || start + count > s.c {
            return Err(Error::InvalidShape(format!("channel range {start}..{} outside {s:?}", start + count)));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * count * plane);
        for n in 0..s.n {
            let base = (n * s.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor { shape: Shape { c: count, ..s }, data })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, k: f32) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// Concatenates along channels: `a`'s channels first, then `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape, b.shape);
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::ShapeMismatch(format!("cannot concat {sa:?} with {sb:?}")));
    }
    let shape = Shape { c: sa.c + sb.c, ..sa };
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..sa.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Ok(Tensor { shape, data })
}

/// Splits a gradient of a concatenation back into its two parts.
pub(crate) fn split_channels(t: &Tensor, c_a: usize) -> (Tensor, Tensor) {
    let s = t.shape;
    let plane = s.plane();
    let c_b = s.c - c_a;
    let mut a = Vec::with_capacity(s.n * c_a * plane);
    let mut b = Vec::with_capacity(s.n * c_b * plane);
    for item in t.data.chunks_exact(s.item()) {
        a.extend_from_slice(&item[..c_a * plane]);
        b.extend_from_slice(&item[c_a * plane..]);
    }
    (Tensor { shape: Shape { c: c_a, ..s }, data: a }, Tensor { shape: Shape { c: c_b, ..s }, data: b })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale(f32),
}

/// Pointwise arithmetic. `Scale` ignores `b`; the binary ops require it.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let binary = |f: fn(f32, f32) -> f32| -> Result<Tensor> {
        let b = b.ok_or_else(|| Error::ShapeMismatch("binary op needs a second operand".into()))?;
        same_shape(a, b)?;
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape: a.shape, data })
    };
    match op {
        ElementwiseOp::Add => binary(|x, y| x + y),
        ElementwiseOp::Sub => binary(|x, y| x - y),
        ElementwiseOp::Mul => binary(|x, y| x * y),
        ElementwiseOp::Scale(k) => Ok(Tensor { shape: a.shape, data: a.data.iter().map(|v| v * k).collect() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
        Tensor::new(shape, FillSpec::SeededUniform { lo: -1.0, hi: 1.0, seed }).unwrap()
    }

    #[test]
    fn constant_fills() {
        let z = Tensor::new((1, 1, 2, 2), FillSpec::Constant(0.0)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let o = Tensor::new((1, 1, 2, 2), FillSpec::Constant(1.0)).unwrap();
        assert_eq!(o.sum(), 4.0);
    }

    #[test]
    fn seeded_fill_is_reproducible() {
        let a = Tensor::new((2, 3, 4, 4), FillSpec::SeededUniform { lo: 0.0, hi: 1.0, seed: 42 }).unwrap();
        let b = Tensor::new((2, 3, 4, 4), FillSpec::SeededUniform { lo: 0.0, hi: 1.0, seed: 42 }).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let n1 = Tensor::new((1, 2, 3, 3), FillSpec::SeededNormal { mean: 0.0, std: 1.0, seed: 4 }).unwrap();
        let n2 = Tensor::new((1, 2, 3, 3), FillSpec::SeededNormal { mean: 0.0, std: 1.0, seed: 4 }).unwrap();
        assert_eq!(bits(&n1), bits(&n2));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(Tensor::zeros((1, 0, 2, 2)), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::from_vec((1, 1, 2, 2), vec![0.0; 3]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn concat_shape_and_order() {
        let a = uniform((1, 2, 4, 4), 1);
        let b = uniform((1, 3, 4, 4), 2);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        for k in 2..5 {
            for h in 0..4 {
                for w in 0..4 {
                    assert_eq!(c.at(0, k, h, w), b.at(0, k - 2, h, w));
                }
            }
        }
    }

    #[test]
    fn concat_with_zeros_slices_back() {
        let x = uniform((2, 3, 5, 4), 8);
        let z = Tensor::zeros((2, 2, 5, 4)).unwrap();
        let c = concat_channels(&x, &z).unwrap();
        assert_eq!(c.slice_channels(0, 3).unwrap(), x);
    }

    #[test]
    fn concat_mismatch() {
        let a = uniform((1, 2, 4, 4), 1);
        let b = uniform((1, 2, 4, 2), 1);
        assert!(matches!(concat_channels(&a, &b), Err(Error::ShapeMismatch(_))));
        let c = uniform((2, 2, 4, 4), 1);
        assert!(matches!(concat_channels(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn elementwise_identities() {
        let x = uniform((1, 2, 3, 3), 3);
        let z = x.zeros_like();
        assert_eq!(elementwise(ElementwiseOp::Add, &x, Some(&z)).unwrap(), x);
        assert_eq!(elementwise(ElementwiseOp::Scale(1.0), &x, None).unwrap(), x);
        let two = Tensor::new((1, 1, 2, 2), FillSpec::Constant(2.0)).unwrap();
        let four = elementwise(ElementwiseOp::Mul, &two, Some(&two)).unwrap();
        assert!(four.data().iter().all(|&v| v == 4.0));
        let diff = elementwise(ElementwiseOp::Sub, &x, Some(&x)).unwrap();
        assert_eq!(diff.max_abs(), 0.0);
        let other = uniform((1, 2, 3, 2), 3);
        assert!(matches!(elementwise(ElementwiseOp::Add, &x, Some(&other)), Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn concat_roundtrip(n in 1usize..3, ca in 1usize..4, cb in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
            let a = uniform((n, ca, h, w), seed);
            let b = uniform((n, cb, h, w), seed ^ 1);
            let c = concat_channels(&a, &b).unwrap();
            prop_assert_eq!(c.len(), a.len() + b.len());
            prop_assert_eq!(&c.slice_channels(0, ca).unwrap(), &a);
            prop_assert_eq!(&c.slice_channels(ca, cb).unwrap(), &b);
            let (sa, sb) = split_channels(&c, ca);
            prop_assert_eq!(sa, a);
            prop_assert_eq!(sb, b);
        }
    }
}
