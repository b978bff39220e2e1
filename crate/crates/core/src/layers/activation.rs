use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
}

impl Activation {
    fn validate(self) -> Result<()> {
        if let Activation::LeakyRelu(slope) = self {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::InvalidConfig(format!("leaky-ReLU slope must be in (0, 1), got {slope}")));
            }
        }
        Ok(())
    }

    #[inline]
    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
        }
    }

    #[inline]
    fn slope_at(self, v: f32) -> f32 {
        match self {
            _ if v > 0.0 => 1.0,
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => s,
        }
    }
}

pub fn activation_forward(kind: Activation, x: &Tensor) -> Result<Tensor> {
    kind.validate()?;
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_vec(x.shape(), data)
}

/// `x` is the activation's input.
pub fn activation_backward(kind: Activation, x: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    kind.validate()?;
    if x.shape() != d_out.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), d_out.shape())));
    }
    let data = x.data().iter().zip(d_out.data()).map(|(&v, &g)| g * kind.slope_at(v)).collect();
    Tensor::from_vec(x.shape(), data)
}
