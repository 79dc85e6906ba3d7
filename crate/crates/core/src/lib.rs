//! Learned spatial-transformation routing between image cells and world
//! cells, log-odds scene fusion, and the end-to-end scene model built on a
//! small reverse-mode autodiff core.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the double-precision instantiation used by the CLI.

pub mod adam;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod routing;
pub mod scalar;
pub mod strn;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use fusion::FusionMode;
pub use model::{Image, Observation, Pose};
pub use scalar::Scalar;
pub use tape::{Gradients, Var};

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tape::Tape<f64>;
pub type Model = model::Model<f64>;
pub type ParamSet = nn::ParamSet<f64>;
pub type AdamState = adam::AdamState<f64>;
pub type RoutingBundle = strn::RoutingBundle<f64>;
pub type SceneRepresentation = fusion::SceneRepresentation<f64>;
pub type ViewCells = routing::ViewCells<f64>;
pub type WorldCells = routing::WorldCells<f64>;
