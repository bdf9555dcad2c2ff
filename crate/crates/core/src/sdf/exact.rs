//! Exact signed distance to a watertight triangle mesh.
//!
//! Distance comes from a BVH closest-point query. The sign is read off the
//! angle-weighted pseudo-normal of the feature (face, edge or vertex) that
//! holds the closest point, which is exact for closed oriented manifolds.

use rayon::prelude::*;

use super::{EngineKind, SdfEngine, SdfValue};
use crate::bvh::{Bvh, ClosestPoint, EmptyMeshError};
use crate::geometry::{corner_angle, triangle_normal, TriangleFeature, Vec3};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistance {
    pub value: f64,
    /// Unit vector toward increasing distance.
    pub gradient: Vec3,
    pub closest: ClosestPoint,
}

#[derive(Debug, Clone)]
pub struct ExactSdf {
    mesh: TriMesh,
    bvh: Bvh,
    face_normals: Vec<Vec3>,
    edge_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    watertight: bool,
}

impl ExactSdf {
    pub fn new(mesh: TriMesh) -> Result<Self, EmptyMeshError> {
        let bvh = Bvh::build(&mesh)?;
        let watertight = mesh.is_watertight();
        if !watertight {
            log::warn!("exact SDF built on a non-watertight mesh; signs are best-effort");
        }
        let face_normals: Vec<Vec3> = (0..mesh.face_count())
            .map(|f| {
                let n = triangle_normal(&mesh.triangle(f));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let mut edge_normals = vec![Vec3::zeros(); mesh.edges().len()];
        let mut vertex_normals = vec![Vec3::zeros(); mesh.vertex_count()];
        for (fi, f) in mesh.faces().iter().enumerate() {
            let tri = mesh.triangle(fi);
            let n = face_normals[fi];
            for k in 0..3 {
                vertex_normals[f[k]] += n * corner_angle(&tri, k);
                let e = edge_index(&mesh, f[k], f[(k + 1) % 3]);
                edge_normals[e] += n;
            }
        }
        Ok(Self {
            mesh,
            bvh,
            face_normals,
            edge_normals,
            vertex_normals,
            watertight,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// Angle-weighted vertex pseudo-normals, normalized.
    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        safe_normalize(self.vertex_normals[v])
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_normals[f]
    }

    pub fn closest_point(&self, q: &Vec3) -> ClosestPoint {
        self.bvh.closest_point(&self.mesh, q)
    }

    /// Pseudo-normal of the feature holding a closest point (unnormalized).
    pub fn feature_normal(&self, cp: &ClosestPoint) -> Vec3 {
        let f = self.mesh.faces()[cp.face];
        match cp.feature {
            TriangleFeature::Face => self.face_normals[cp.face],
            TriangleFeature::Edge(a, b) => {
                self.edge_normals[edge_index(&self.mesh, f[a as usize], f[b as usize])]
            }
            TriangleFeature::Vertex(a) => self.vertex_normals[f[a as usize]],
        }
    }

    pub fn signed_distance(&self, q: &Vec3) -> SignedDistance {
        let closest = self.closest_point(q);
        let normal = self.feature_normal(&closest);
        if closest.distance == 0.0 {
            return SignedDistance {
                value: 0.0,
                gradient: safe_normalize(normal),
                closest,
            };
        }
        let offset = q - closest.point;
        let inside = offset.dot(&normal) < 0.0;
        let sign = if inside { -1.0 } else { 1.0 };
        SignedDistance {
            value: sign * closest.distance,
            gradient: offset * (sign / closest.distance),
            closest,
        }
    }

    pub fn signed_distances(&self, points: &[Vec3]) -> Vec<SignedDistance> {
        points.par_iter().map(|q| self.signed_distance(q)).collect()
    }
}

impl SdfEngine for ExactSdf {
    fn kind(&self) -> EngineKind {
        EngineKind::Exact
    }

    fn evaluate(&self, points: &[Vec3]) -> Vec<SdfValue> {
        points
            .par_iter()
            .map(|q| {
                let s = self.signed_distance(q);
                SdfValue {
                    value: s.value,
                    gradient: s.gradient,
                }
            })
            .collect()
    }

    /// The exact field is treated as locally planar: curvature terms are
    /// dropped.
    fn hessian_vector(&self, points: &[Vec3], _dirs: &[Vec3]) -> Vec<Vec3> {
        vec![Vec3::zeros(); points.len()]
    }
}

fn edge_index(mesh: &TriMesh, a: usize, b: usize) -> usize {
    let key = [a.min(b), a.max(b)];
    mesh.edges()
        .binary_search(&key)
        .expect("face edge is present in the edge list")
}

fn safe_normalize(v: Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn cube_center_tie_breaks_to_lowest_face() {
        let sdf = ExactSdf::new(shapes::cube(1.0)).unwrap();
        let s = sdf.signed_distance(&Vec3::zeros());
        assert!((s.value + 0.5).abs() < 1e-15);
        assert_eq!(s.closest.face, 0);
        let g = s.gradient;
        let axis_aligned = (0..3).filter(|&k| g[k].abs() == 1.0).count() == 1
            && (0..3).filter(|&k| g[k] == 0.0).count() == 2;
        assert!(axis_aligned, "{g:?}");
    }

    #[test]
    fn on_surface_query_uses_pseudo_normal() {
        let sdf = ExactSdf::new(shapes::cube(1.0)).unwrap();
        let corner = Vec3::new(0.5, 0.5, 0.5);
        let s = sdf.signed_distance(&corner);
        assert_eq!(s.value, 0.0);
        let expected = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!((s.gradient - expected).norm() < 1e-12);
    }

    #[test]
    fn far_sphere_query_matches_radius() {
        let sphere = shapes::icosphere(1.0, 4);
        let max_edge = sphere
            .edges()
            .iter()
            .map(|&[a, b]| (sphere.vertices()[a] - sphere.vertices()[b]).norm())
            .fold(0.0, f64::max);
        // Chord error bound for a triangle inscribed in the unit sphere.
        let sagitta = 1.0 - (1.0 - max_edge * max_edge / 3.0).sqrt();
        let sdf = ExactSdf::new(sphere).unwrap();
        let q = Vec3::new(0.3, -1.2, 1.5).normalize() * 2.0;
        let s = sdf.signed_distance(&q);
        assert!(s.value >= 1.0 - 1e-12 && s.value <= 1.0 + sagitta, "{} vs {}", s.value, sagitta);
    }
}
