//! Differentiable mass-spring cloth simulation and monocular
//! shape-from-template reconstruction.

pub mod error;
pub mod geometry;
pub mod gradient;
pub mod jet;
pub mod metrics;
pub mod physics;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
