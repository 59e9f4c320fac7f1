//! A small reverse-mode autodiff engine over `[B, C, H, W]` tensors.

pub mod adam;
pub mod convops;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod scalar;

pub use adam::Adam;
pub use convops::PadMode;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use params::{ParamMap, ParamStore};
pub use scalar::Scalar;
