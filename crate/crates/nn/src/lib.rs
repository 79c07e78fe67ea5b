//! Minimal differentiable-operator engine for the cross-AP channel-gain UNet.
//!
//! The engine is deliberately small: dense rank-4 tensors, the handful of
//! operators the UNet uses (convolution, rectifier, nearest upsampling,
//! channel concatenation, pooling), a mean-squared-error loss and Adam. Every
//! operator exposes a forward function and a matching backward function; the
//! UNet wires them by hand in [`unet`].
//!
//! All numerics are generic over [`Scalar`] so that gradient checks can run in
//! `f64` while training runs in `f32`.

mod adam;
pub mod checkpoint;
mod conv;
mod error;
mod loss;
mod ops;
mod scalar;
mod tensor;
pub mod unet;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_backward, conv_output_size, Conv2dGrads};
pub use error::{NnError, Result};
pub use loss::{mse_loss, MseLoss};
pub use ops::{
    avg_pool2, avg_pool2_backward, concat_channels, concat_channels_backward, max_pool2,
    max_pool2_backward, relu, relu_backward, upsample_nearest2, upsample_nearest2_backward,
};
pub use scalar::Scalar;
pub use tensor::{Param, Shape4, Tensor4};
pub use unet::{UNet, UNetConfig};
