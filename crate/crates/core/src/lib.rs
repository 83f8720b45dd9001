//! Model-based 3D facial motion tracking by cascaded regression.
//!
//! The regressor is a cascade of modality-grouped boosted ferns fused by a
//! global ridge refit. A synthetic parametric-shape harness generates
//! frame sequences with exact ground truth so the full train/track/evaluate
//! loop runs at desk scale.

pub mod cascade;
pub mod delaunay;
pub mod error;
pub mod ferns;
pub mod gombf;
pub mod image;
pub mod init_fit;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod rng;
pub mod shape_model;
pub mod synthscene;

pub use error::{Error, Result};

// Downstream crates build on the same linear-algebra types.
pub use nalgebra;
pub use shape_model::{Camera, MotionDims, MotionParams, ParametricShapeModel, StaticParams};
