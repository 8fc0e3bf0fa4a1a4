//! Forward and backward kernels over plain tensors. The tape in
//! [`crate::tape`] records calls to these and chains their backward passes.

pub mod conv;
pub mod pointwise;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use pointwise::{bce_loss, concat_channels, dice_loss, leaky, sigmoid, BCE_EPS};
pub use pool::maxpool2d_2x2;
pub use resize::{resize_bilinear, resize_nearest, upsample_output_shape};
