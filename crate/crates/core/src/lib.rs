//! Differentiable operators, deformable convolution and the LDRCNet
//! single-image deraining networks, trainable on CPU.

pub mod arch;
pub mod autograd;
pub mod data;
pub mod deform;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Shape, Tensor};
