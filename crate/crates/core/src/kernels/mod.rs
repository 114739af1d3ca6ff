//! Forward and backward kernels over plain [`Tensor`](crate::tensor::Tensor) values.
//!
//! Every reduction is evaluated in a fixed order, so results are bit-identical
//! across runs regardless of how rayon schedules the outer loops.

pub mod conv;
pub(crate) mod gemm;
pub mod pointwise;
pub mod pool;
pub mod reference;
pub mod resize;
pub(crate) mod scratch;

pub use conv::{conv2d, conv2d_backward, conv_output_dim, ConvGeom};
pub use pointwise::{concat_channels, mse_loss, relu, scale_channels, sigmoid, split_channels};
pub use pool::{avgpool2d, avgpool2d_backward, global_avgpool};
pub use resize::{upsample2x, upsample2x_backward, UpsampleMode};
