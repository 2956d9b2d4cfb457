//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). Models own a
//! [`ParamSet`], bind it into a fresh [`Graph`] per step, and read gradients
//! back after [`Graph::backward`].

pub mod conv;
mod error;
pub mod graph;
pub mod io;
pub mod layers;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod param;
pub mod pool;
pub mod resample;
pub mod scalar;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{BatchNorm2d, Conv2d, ConvSpec};
pub use optim::{Adam, AdamConfig};
pub use param::{Bound, Mode, ParamId, ParamSet};
pub use resample::{Filter, Resampler};
pub use scalar::{lit, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
