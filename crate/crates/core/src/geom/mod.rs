//! Meshes, poses, ray casting and signed-distance queries.

pub mod bvh;
pub mod io;
pub mod mesh;
pub mod sdf;
pub mod vec;

pub use bvh::{Bvh, ClosestPoint, RayHit};
pub use io::{load_mesh, save_mesh};
pub use mesh::TriangleMesh;
pub use sdf::{signed_distance, MeshSdf};
pub use vec::{Aabb, Mat3, Pose, Vec3};
