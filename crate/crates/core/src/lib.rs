//! Reconstruction of a temporally evolving triangle mesh plus texture from a
//! monocular image sequence.
//!
//! The geometry side optimizes per-face deformation Jacobians that are turned
//! into vertex positions by a prefactorized least-squares (Poisson) solve,
//! posed by linear blend skinning and scored against diffuse/depth/mask
//! renders of the input frames, with gradient-driven adaptive remeshing.
//! The appearance side recovers a static plus per-frame dynamic texture atlas
//! on the finalized mesh. Everything runs on the CPU and is deterministic for
//! fixed seeds.

pub mod fields;
pub mod img;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod pipeline;
pub mod poisson;
pub mod remesh;
pub mod render;
pub mod skinning;
pub mod sparse;
pub mod texture;

pub use mesh::Mesh;

/// 3-component column vector, `f64`.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 2-component column vector, `f64`.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3x3 matrix, `f64`.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// 4x4 homogeneous transform, `f64`.
pub type Mat4 = nalgebra::Matrix4<f64>;
