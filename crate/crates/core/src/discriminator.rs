//! Fully convolutional discriminator.
//!
//! Four 4x4 stride-2 convolutions, each followed by leaky-ReLU, shrink the
//! input by 16; a final 3x3 convolution maps to two per-location logits
//! (fake = 0, real = 1), and four bilinear x2 upsamplings bring the map back to
//! the input resolution.

use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::network::{Mode, Network, NetworkBuilder};
use crate::tensor::Tensor;

pub const DISC_DIVISOR: usize = 16;
pub const DISC_CONV_COUNT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub widths: [usize; 4],
    pub slope: f32,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { in_channels: 2, widths: [64, 128, 256, 512], slope: 0.2, seed: 1 }
    }
}

pub fn build_discriminator(cfg: &DiscriminatorConfig) -> Result<Network> {
    if cfg.in_channels == 0 {
        return Err(Error::InvalidConfig("discriminator needs at least one input channel".into()));
    }
    if cfg.widths.contains(&0) || cfg.widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!("widths must be positive and increasing, got {:?}", cfg.widths)));
    }
    let mut b = NetworkBuilder::new(cfg.in_channels, cfg.seed)?;
    let mut x = b.input();
    for (i, &width) in cfg.widths.iter().enumerate() {
        let c = b.conv(&format!("conv{}", i + 1), x, width, 4, 2, 1)?;
        x = b.activation(&format!("lrelu{}", i + 1), c, Activation::LeakyRelu(cfg.slope))?;
    }
    x = b.conv("classifier", x, 2, 3, 1, 1)?;
    for i in 0..4 {
        x = b.upsample(&format!("up{}", i + 1), x, 2)?;
    }
    Ok(b.build())
}

fn check_geometry(x: &Tensor) -> Result<()> {
    let s = x.shape();
    if !s.h.is_multiple_of(DISC_DIVISOR) || !s.w.is_multiple_of(DISC_DIVISOR) {
        return Err(Error::InvalidGeometry(format!(
            "discriminator input sides must be divisible by {DISC_DIVISOR}, got {s:?}"
        )));
    }
    Ok(())
}

/// Per-pixel real/fake logits at the input's resolution. Caches activations
/// for a subsequent backward pass.
pub fn disc_forward(net: &mut Network, prob_map: &Tensor) -> Result<Tensor> {
    check_geometry(prob_map)?;
    net.forward(prob_map, Mode::Eval)
}

/// Accumulates parameter gradients and returns the gradient on the input map.
pub fn disc_backward(net: &mut Network, d_conf: &Tensor) -> Result<Tensor> {
    net.backward(d_conf)
}
