use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-pixel class indices, `(n, h, w)` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || data.len() != n * h * w {
            return Err(Error::InvalidShape(format!("{} labels for ({n}, {h}, {w})", data.len())));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, class: u8) -> Self {
        Self { n, h, w, data: vec![class; n * h * w] }
    }
}

/// One-hot `(n, 2, h, w)` encoding of a binary label map.
pub fn one_hot(labels: &LabelMap) -> Result<Tensor> {
    let plane = labels.h * labels.w;
    let mut data = vec![0.0; labels.n * 2 * plane];
    for n in 0..labels.n {
        for (i, &l) in labels.data[n * plane..(n + 1) * plane].iter().enumerate() {
            if l > 1 {
                return Err(Error::InvalidLabel(format!("label {l} is not binary")));
            }
            data[(n * 2 + l as usize) * plane + i] = 1.0;
        }
    }
    Tensor::from_vec((labels.n, 2, labels.h, labels.w), data)
}

/// Channel-wise softmax for every pixel.
pub fn softmax(logits: &Tensor) -> Tensor {
    let s = logits.shape();
    let plane = s.plane();
    let mut out = logits.zeros_like();
    for (src, dst) in logits.data().chunks_exact(s.item()).zip(out.data_mut().chunks_exact_mut(s.item())) {
        for i in 0..plane {
            let m = (0..s.c).map(|c| src[c * plane + i]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f64;
            for c in 0..s.c {
                z += ((src[c * plane + i] - m) as f64).exp();
            }
            for c in 0..s.c {
                dst[c * plane + i] = (((src[c * plane + i] - m) as f64).exp() / z) as f32;
            }
        }
    }
    out
}

/// Pulls a gradient on softmax probabilities back to the logits:
/// `dl_k = p_k * (dp_k - sum_j p_j dp_j)`.
pub fn softmax_backward(probs: &Tensor, d_probs: &Tensor) -> Result<Tensor> {
    let s = probs.shape();
    if d_probs.shape() != s {
        return Err(Error::ShapeMismatch(format!("{:?} vs {s:?}", d_probs.shape())));
    }
    let plane = s.plane();
    let mut out = probs.zeros_like();
    for n in 0..s.n {
        let (p, g) = (probs.item(n), d_probs.item(n));
        let dst = out.item_mut(n);
        for i in 0..plane {
            let dot: f64 = (0..s.c).map(|c| p[c * plane + i] as f64 * g[c * plane + i] as f64).sum();
            for c in 0..s.c {
                let k = c * plane + i;
                dst[k] = (p[k] as f64 * (g[k] as f64 - dot)) as f32;
            }
        }
    }
    Ok(out)
}

/// Mean two-class cross-entropy over all `n*h*w` pixels, and its exact
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &LabelMap) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.c != 2 {
        return Err(Error::ShapeMismatch(format!("cross-entropy expects 2 channels, got {}", s.c)));
    }
    if (targets.n, targets.h, targets.w) != (s.n, s.h, s.w) {
        return Err(Error::ShapeMismatch(format!(
            "labels ({}, {}, {}) vs logits {s:?}",
            targets.n, targets.h, targets.w
        )));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut total = 0.0f64;
    let mut grad = Tensor::zeros_unchecked(Shape { c: 2, ..s });
    for n in 0..s.n {
        let src = logits.item(n);
        let labels = &targets.data[n * plane..(n + 1) * plane];
        let dst = grad.item_mut(n);
        for (i, &t) in labels.iter().enumerate() {
            if t > 1 {
                return Err(Error::InvalidLabel(format!("label {t} is not binary")));
            }
            let (a, b) = (src[i] as f64, src[plane + i] as f64);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            total += lse - if t == 0 { a } else { b };
            let p1 = (b - lse).exp();
            let p0 = (a - lse).exp();
            dst[i] = ((p0 - if t == 0 { 1.0 } else { 0.0 }) / count) as f32;
            dst[plane + i] = ((p1 - if t == 1 { 1.0 } else { 0.0 }) / count) as f32;
        }
    }
    Ok((total / count, grad))
}
