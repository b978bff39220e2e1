//! The U-Net segmentor.
//!
//! Four encoder stages (two 3x3 same-padded convs with ReLU, then 2x2 max
//! pooling), a two-conv bottleneck followed by dropout, four decoder stages
//! (2x2 up-convolution halving channels, concatenation with the matching
//! encoder features, two 3x3 convs with ReLU) and a final 1x1 conv to class
//! logits. Widths are `base * 2^k` at depth `k`; with the default base of 64
//! that is 64, 128, 256, 512 and 1024 at the bottleneck, and 23 convolutions
//! in total.

use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::network::{Mode, Network, NetworkBuilder};
use crate::tensor::Tensor;

pub const UNET_DEPTH: usize = 4;
/// Spatial dims must be divisible by this.
pub const UNET_DIVISOR: usize = 1 << UNET_DEPTH;
pub const UNET_CONV_COUNT: usize = 23;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub dropout_rate: f32,
    pub seed: u64,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { in_channels: 3, num_classes: 2, base_channels: 64, dropout_rate: 0.5, seed: 0 }
    }
}

pub fn build_unet(cfg: &UnetConfig) -> Result<Network> {
    if cfg.in_channels == 0 {
        return Err(Error::InvalidConfig("U-Net needs at least one input channel".into()));
    }
    if cfg.num_classes < 2 {
        return Err(Error::InvalidConfig(format!("U-Net needs >= 2 classes, got {}", cfg.num_classes)));
    }
    if cfg.base_channels == 0 {
        return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
    }
    let mut b = NetworkBuilder::new(cfg.in_channels, cfg.seed)?;
    let double_conv = |b: &mut NetworkBuilder, prefix: &str, from, width| -> Result<_> {
        let c1 = b.conv(&format!("{prefix}.conv1"), from, width, 3, 1, 1)?;
        let r1 = b.activation(&format!("{prefix}.relu1"), c1, Activation::Relu)?;
        let c2 = b.conv(&format!("{prefix}.conv2"), r1, width, 3, 1, 1)?;
        b.activation(&format!("{prefix}.relu2"), c2, Activation::Relu)
    };

    let mut skips = Vec::with_capacity(UNET_DEPTH);
    let mut x = b.input();
    for level in 0..UNET_DEPTH {
        let width = cfg.base_channels << level;
        let feat = double_conv(&mut b, &format!("enc{level}"), x, width)?;
        skips.push(feat);
        x = b.maxpool(&format!("enc{level}.pool"), feat);
    }
    let bottom = double_conv(&mut b, "bottleneck", x, cfg.base_channels << UNET_DEPTH)?;
    x = b.dropout("bottleneck.dropout", bottom, cfg.dropout_rate)?;
    for level in (0..UNET_DEPTH).rev() {
        let up = b.upconv(&format!("dec{level}.up"), x)?;
        let cat = b.concat(&format!("dec{level}.concat"), skips[level], up);
        x = double_conv(&mut b, &format!("dec{level}"), cat, cfg.base_channels << level)?;
    }
    b.conv("head", x, cfg.num_classes, 1, 1, 0)?;
    Ok(b.build())
}

fn check_geometry(x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.h != s.w || !s.h.is_multiple_of(UNET_DIVISOR) {
        return Err(Error::InvalidGeometry(format!(
            "U-Net input must be square with sides divisible by {UNET_DIVISOR}, got {s:?}"
        )));
    }
    Ok(())
}

/// Logits with the input's spatial size. Training mode caches activations for
/// [`unet_backward`] and applies seeded dropout.
pub fn unet_forward(net: &mut Network, x: &Tensor, training: bool, seed: u64) -> Result<Tensor> {
    check_geometry(x)?;
    if training {
        net.forward(x, Mode::Train { seed })
    } else {
        net.forward(x, Mode::Eval)
    }
}

/// Inference without caching.
pub fn unet_infer(net: &Network, x: &Tensor) -> Result<Tensor> {
    check_geometry(x)?;
    net.infer(x)
}

/// Accumulates parameter gradients from `d_logits` and returns the input gradient.
pub fn unet_backward(net: &mut Network, d_logits: &Tensor) -> Result<Tensor> {
    net.backward(d_logits)
}

/// Recovers `(in_channels, num_classes, base_channels)` from checkpoint entries
/// written by a U-Net.
pub fn unet_config_from_checkpoint(entries: &[crate::network::CheckpointEntry]) -> Result<UnetConfig> {
    let first = entries.first().ok_or_else(|| Error::FormatError("empty checkpoint".into()))?;
    let head = entries
        .iter()
        .rev()
        .find(|e| e.name.ends_with(".weight"))
        .ok_or_else(|| Error::FormatError("checkpoint has no weights".into()))?;
    if first.name != "enc0.conv1.weight" || head.name != "head.weight" {
        return Err(Error::FormatError("checkpoint does not describe a U-Net".into()));
    }
    Ok(UnetConfig {
        in_channels: first.shape[1] as usize,
        num_classes: head.shape[0] as usize,
        base_channels: first.shape[0] as usize,
        ..UnetConfig::default()
    })
}
