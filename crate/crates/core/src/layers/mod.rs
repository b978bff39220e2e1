//! Forward and backward kernels for every layer the segmentor and the
//! discriminator use.

mod activation;
mod conv;
mod dropout;
mod loss;
mod pool;
mod upconv;
mod upsample;

pub use activation::{activation_backward, activation_forward, Activation};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_size, ConvParams, LayerGrads};
pub use dropout::{dropout_backward, dropout_forward, MaskRecord};
pub use loss::{one_hot, softmax, softmax_backward, softmax_cross_entropy, LabelMap};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, ArgmaxRecord};
pub use upconv::{upconv2x2_backward, upconv2x2_forward};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};

pub(crate) use conv::conv2d_backward_into;
pub(crate) use upconv::upconv2x2_backward_into;
