//! Adversarial U-Net segmentation of stroke lesions in perfusion CT.
//!
//! A U-Net segmentor is trained on 2D slices with a cross-entropy loss plus an
//! adversarial term from a fully-convolutional discriminator that tries to
//! tell predicted probability maps from one-hot ground truth. Everything runs
//! on the CPU in `f32` with NCHW tensors.

pub mod data;
pub mod discriminator;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use network::{Mode, Network};
pub use tensor::{Shape, Tensor};
pub use volume::{MaskVolume, Modality, VolumeCase};
