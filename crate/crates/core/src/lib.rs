//! Occlusion-completing indoor surface reconstruction from posed depth images.

// NaN-rejecting `!(x > 0.0)` checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fsutil;
pub mod geom;
pub mod nn;
pub mod octree;
pub mod pipeline;
pub mod render;
pub mod samples;
pub mod scenegen;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use geom::{Aabb, Bvh, Mat3, MeshSdf, Pose, TriangleMesh, Vec3};

/// Toolkit version stamped into every output directory.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
