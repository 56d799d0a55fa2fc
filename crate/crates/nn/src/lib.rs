//! A compact CPU tensor engine for convolutional image networks.
//!
//! Networks are written once against the [`Backend`] trait and run either
//! eagerly through [`Eval`] (inference, finite differences) or on a [`Tape`]
//! that records the forward pass and differentiates it in reverse. All
//! kernels are generic over [`Float`], so the same model code runs in `f32`
//! for training and in `f64` for gradient checking.

mod backend;
mod float;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use backend::{Backend, Eval, ParamKey};
pub use float::{gemm, Float};
pub use kernels::ConvGeom;
pub use optim::{Adam, AdamConfig};
pub use params::{kaiming_normal, normalize, power_iteration, uniform, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Shape, Tensor};
