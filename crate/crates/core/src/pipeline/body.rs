//! Parametric stand-in for a human torso: an ellipsoid whose axes follow
//! the shape parameters, bent and twisted along its height by the pose
//! parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::mesh::TriMesh;
use crate::shapes;

pub const BETA_DIM: usize = 2;
pub const THETA_DIM: usize = 3;
pub const GAMMA_DIM: usize = 3;
pub const PARAM_DIM: usize = BETA_DIM + THETA_DIM + GAMMA_DIM;

/// Shape `beta`, pose `theta` and garment style `gamma`, each nominally in
/// `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub beta: [f64; BETA_DIM],
    pub theta: [f64; THETA_DIM],
    pub gamma: [f64; GAMMA_DIM],
}

impl FrameParams {
    pub fn zero() -> Self {
        Self {
            beta: [0.0; BETA_DIM],
            theta: [0.0; THETA_DIM],
            gamma: [0.0; GAMMA_DIM],
        }
    }

    /// Every entry uniform in `[-range, range]`.
    pub fn uniform<R: Rng + ?Sized>(rng: &mut R, range: f64) -> Self {
        let mut v = [0.0; PARAM_DIM];
        for x in v.iter_mut() {
            *x = rng.gen_range(-range..=range);
        }
        Self::from_slice(&v)
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), PARAM_DIM, "parameter vector width");
        let mut p = Self::zero();
        p.beta.copy_from_slice(&v[..BETA_DIM]);
        p.theta.copy_from_slice(&v[BETA_DIM..BETA_DIM + THETA_DIM]);
        p.gamma.copy_from_slice(&v[BETA_DIM + THETA_DIM..]);
        p
    }

    /// `(beta, theta, gamma)` concatenated.
    pub fn to_vec(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.theta).chain(&self.gamma).copied().collect()
    }

    /// Conditioning of the body SDF: `(beta, theta)`.
    pub fn body_cond(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.theta).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub subdivisions: usize,
    /// Ellipsoid semi-axes at zero shape, meters.
    pub radii: [f64; 3],
    /// Relative girth change per unit `beta[0]`.
    pub girth_scale: f64,
    /// Relative height change per unit `beta[1]`.
    pub height_scale: f64,
    /// Forward bend, side bend and twist at the top of the torso for a unit
    /// pose entry, radians.
    pub pose_angles: [f64; 3],
}

impl Default for BodyModel {
    fn default() -> Self {
        Self {
            subdivisions: 3,
            radii: [0.15, 0.11, 0.30],
            girth_scale: 0.2,
            height_scale: 0.1,
            pose_angles: [0.35, 0.25, 0.4],
        }
    }
}

fn rotate(a: f64, b: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (a * c - b * s, a * s + b * c)
}

impl BodyModel {
    pub fn semi_axes(&self, beta: &[f64; BETA_DIM]) -> Vec3 {
        let g = 1.0 + self.girth_scale * beta[0];
        let h = 1.0 + self.height_scale * beta[1];
        Vec3::new(self.radii[0] * g, self.radii[1] * g, self.radii[2] * h)
    }

    /// Ellipsoid point in direction `dir` (a unit vector, scaled per axis)
    /// and its outward unit normal.
    pub fn ellipsoid_point(&self, dir: &Vec3, beta: &[f64; BETA_DIM]) -> (Vec3, Vec3) {
        let ax = self.semi_axes(beta);
        let p = dir.component_mul(&ax);
        let n = Vec3::new(dir.x / ax.x, dir.y / ax.y, dir.z / ax.z).normalize();
        (p, n)
    }

    /// Pose deformation: rotations whose angles grow linearly with height,
    /// applied as twist, forward bend, side bend.
    pub fn deform(&self, p: &Vec3, params: &FrameParams) -> Vec3 {
        let height = self.semi_axes(&params.beta).z;
        let u = p.z / height;
        let [bend, side, twist] = self.pose_angles;
        let (x, y) = rotate(p.x, p.y, twist * params.theta[2] * u);
        let (y, z) = rotate(y, p.z, bend * params.theta[0] * u);
        let (z, x) = rotate(z, x, side * params.theta[1] * u);
        Vec3::new(x, y, z)
    }

    pub fn mesh(&self, params: &FrameParams) -> TriMesh {
        let sphere = shapes::icosphere(1.0, self.subdivisions);
        let vertices = sphere
            .vertices()
            .iter()
            .map(|d| self.deform(&self.ellipsoid_point(d, &params.beta).0, params))
            .collect();
        sphere.with_vertices(vertices).expect("same vertex count")
    }

    /// Largest semi-axis at zero shape, a scale for noise and tolerances.
    pub fn nominal_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::ExactSdf;

    #[test]
    fn rest_pose_is_the_ellipsoid() {
        let m = BodyModel::default();
        let p = FrameParams::zero();
        let d = Vec3::new(1.0, 2.0, -0.5).normalize();
        let (e, _) = m.ellipsoid_point(&d, &p.beta);
        assert_eq!(m.deform(&e, &p), e);
        let v = e.component_div(&m.semi_axes(&p.beta));
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posed_bodies_stay_closed_and_contain_the_origin() {
        let m = BodyModel::default();
        for theta in [[1.0, 1.0, 1.0], [-1.3, 0.4, -1.3]] {
            let p = FrameParams {
                beta: [1.2, -1.2],
                theta,
                gamma: [0.0; 3],
            };
            let mesh = m.mesh(&p);
            assert!(mesh.is_watertight());
            assert!(mesh.degenerate_faces().is_empty());
            let sdf = ExactSdf::new(mesh).unwrap();
            assert!(sdf.signed_distance(&Vec3::zeros()).value < -0.05);
        }
    }

    #[test]
    fn params_round_trip_through_vectors() {
        let v: Vec<f64> = (0..PARAM_DIM).map(|i| i as f64 * 0.1).collect();
        let p = FrameParams::from_slice(&v);
        assert_eq!(p.to_vec(), v);
        assert_eq!(p.body_cond(), v[..BETA_DIM + THETA_DIM].to_vec());
    }
}
