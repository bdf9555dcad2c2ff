//! Garment-body collision handling driven by signed distance fields.
//!
//! The crate bundles an exact mesh SDF, a small dense-network stack with the
//! nested derivatives needed for Eikonal training, a learned body SDF, the
//! repulsive-force layer itself, collision metrics, competing baselines and
//! the synthetic experiment pipeline.

pub mod baselines;
pub mod bvh;
pub mod collision;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod refu;
pub mod sdf;
pub mod shapes;

pub use geometry::Vec3;
pub use mesh::TriMesh;
