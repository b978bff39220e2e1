use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-element multipliers applied by a dropout forward pass; `None` means the
/// pass was the identity.
#[derive(Clone, Debug)]
pub struct MaskRecord {
    scale: Option<Vec<f32>>,
}

impl MaskRecord {
    pub fn identity() -> Self {
        Self { scale: None }
    }

    pub fn kept_fraction(&self) -> f64 {
        match &self.scale {
            None => 1.0,
            Some(s) => s.iter().filter(|&&v| v != 0.0).count() as f64 / s.len().max(1) as f64,
        }
    }
}

/// Inverted dropout: in training each element is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; at inference it is the identity.
/// Element `i` is dropped iff the `i`-th draw of `Rng::new(seed).uniform01()`
/// is below `p`.
pub fn dropout_forward(x: &Tensor, p: f32, seed: u64, training: bool) -> Result<(Tensor, MaskRecord)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("dropout rate must be in [0, 1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), MaskRecord::identity()));
    }
    let keep = 1.0 / (1.0 - p);
    let mut rng = Rng::new(seed);
    let scale: Vec<f32> = (0..x.len()).map(|_| if rng.uniform01() < p { 0.0 } else { keep }).collect();
    let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
    Ok((Tensor::from_vec(x.shape(), data)?, MaskRecord { scale: Some(scale) }))
}

pub fn dropout_backward(rec: &MaskRecord, d_out: &Tensor) -> Result<Tensor> {
    match &rec.scale {
        None => Ok(d_out.clone()),
        Some(s) if s.len() == d_out.len() => {
            let data = d_out.data().iter().zip(s).map(|(g, m)| g * m).collect();
            Tensor::from_vec(d_out.shape(), data)
        }
        Some(s) => Err(Error::ShapeMismatch(format!("mask of {} for gradient of {}", s.len(), d_out.len()))),
    }
}
