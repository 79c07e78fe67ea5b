//! Reference implementations and finite-difference harnesses used only by
//! tests. Nothing here shares code paths with the engine it checks: the
//! convolution oracle is a direct nested loop and gradients are recovered by
//! central differences of forward evaluations.

pub mod gradcheck;
pub mod naive;

pub use gradcheck::{check_all_ops, check_unet, GradReport};
pub use naive::{conv_oracle_errors, naive_conv2d};
