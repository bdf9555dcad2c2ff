//! Garment-body collision detection.
//!
//! VF: garment vertices inside the body (exact SDF below `-tol`).
//! Intersections: garment/body triangle pairs that cross, found with a
//! BVH-vs-BVH broad phase and an exact triangle-triangle narrow phase.
//! A colliding garment triangle is VF-classified when it owns a penetrating
//! vertex and EE-classified otherwise.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::geometry::Vec3;
use crate::mesh::TriMesh;
use crate::sdf::ExactSdf;

/// Geometric tolerance in meters. Vertices within this of the surface do
/// not count as penetrating, and triangle overlaps shorter than this count
/// as touching, not crossing.
pub const CONTACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriTri {
    Disjoint,
    Crossing,
    /// Coplanar with overlapping area (or touching). Counted as a collision.
    Coplanar,
}

impl TriTri {
    pub fn collides(self) -> bool {
        !matches!(self, TriTri::Disjoint)
    }
}

fn plane_distances(tri: &[Vec3; 3], other: &[Vec3; 3], tol: f64) -> Option<(Vec3, [f64; 3])> {
    let n = (other[1] - other[0]).cross(&(other[2] - other[0]));
    let len = n.norm();
    if len == 0.0 {
        return None;
    }
    let n = n / len;
    let mut d = [0.0; 3];
    for k in 0..3 {
        let v = (tri[k] - other[0]).dot(&n);
        d[k] = if v.abs() <= tol { 0.0 } else { v };
    }
    Some((n, d))
}

/// Interval covered on the line with direction `dir` by the part of `tri`
/// that lies in the other triangle's plane.
fn line_interval(tri: &[Vec3; 3], d: &[f64; 3], dir: &Vec3) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut push = |p: Vec3| {
        let t = p.dot(dir);
        lo = lo.min(t);
        hi = hi.max(t);
    };
    for k in 0..3 {
        if d[k] == 0.0 {
            push(tri[k]);
        }
        let j = (k + 1) % 3;
        if (d[k] < 0.0 && d[j] > 0.0) || (d[k] > 0.0 && d[j] < 0.0) {
            let s = d[k] / (d[k] - d[j]);
            push(tri[k] + (tri[j] - tri[k]) * s);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Exact-enough triangle-triangle test. Degenerate (zero-area) triangles
/// never collide.
pub fn triangles_intersect(a: &[Vec3; 3], b: &[Vec3; 3], tol: f64) -> TriTri {
    let Some((nb, da)) = plane_distances(a, b, tol) else {
        return TriTri::Disjoint;
    };
    if da.iter().all(|&v| v > 0.0) || da.iter().all(|&v| v < 0.0) {
        return TriTri::Disjoint;
    }
    let Some((na, db)) = plane_distances(b, a, tol) else {
        return TriTri::Disjoint;
    };
    if db.iter().all(|&v| v > 0.0) || db.iter().all(|&v| v < 0.0) {
        return TriTri::Disjoint;
    }
    if da.iter().all(|&v| v == 0.0) {
        return if coplanar_overlap(a, b, &na) {
            TriTri::Coplanar
        } else {
            TriTri::Disjoint
        };
    }
    let dir = na.cross(&nb);
    let len = dir.norm();
    if len < 1e-12 {
        // Parallel but offset planes were rejected above; nearly parallel
        // planes within tolerance are treated as coplanar.
        return if coplanar_overlap(a, b, &na) {
            TriTri::Coplanar
        } else {
            TriTri::Disjoint
        };
    }
    let dir = dir / len;
    let (Some((a0, a1)), Some((b0, b1))) = (line_interval(a, &da, &dir), line_interval(b, &db, &dir)) else {
        return TriTri::Disjoint;
    };
    if a1.min(b1) - a0.max(b0) > tol {
        TriTri::Crossing
    } else {
        TriTri::Disjoint
    }
}

fn coplanar_overlap(a: &[Vec3; 3], b: &[Vec3; 3], n: &Vec3) -> bool {
    // Drop the dominant normal axis and test in 2D.
    let axis = n.iamax();
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let p = |v: &Vec3| [v[i], v[j]];
    let ta = [p(&a[0]), p(&a[1]), p(&a[2])];
    let tb = [p(&b[0]), p(&b[1]), p(&b[2])];
    for e in 0..3 {
        for f in 0..3 {
            if segments_intersect_2d(ta[e], ta[(e + 1) % 3], tb[f], tb[(f + 1) % 3]) {
                return true;
            }
        }
    }
    point_in_triangle_2d(ta[0], &tb) || point_in_triangle_2d(tb[0], &ta)
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect_2d(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: f64| {
        d == 0.0 && c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

fn point_in_triangle_2d(p: [f64; 2], t: &[[f64; 2]; 3]) -> bool {
    let s0 = orient(t[0], t[1], p);
    let s1 = orient(t[1], t[2], p);
    let s2 = orient(t[2], t[0], p);
    (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
}

/// Garment vertices whose exact signed distance is below `-tol`.
pub fn detect_vf(garment: &[Vec3], body: &ExactSdf, tol: f64) -> Vec<usize> {
    let values = body.signed_distances(garment);
    values
        .iter()
        .enumerate()
        .filter(|(_, s)| s.value < -tol)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// Penetrating garment vertices, sorted.
    pub vf_vertices: Vec<usize>,
    /// Crossing `(garment_face, body_face)` pairs, sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Garment faces that own a penetrating vertex.
    pub vf_triangles: Vec<usize>,
    /// Crossing garment faces without a penetrating vertex.
    pub ee_triangles: Vec<usize>,
    /// Pairs found coplanar (a subset of `pairs`).
    pub coplanar_pairs: usize,
}

impl CollisionReport {
    pub fn is_collision_free(&self) -> bool {
        self.vf_vertices.is_empty() && self.pairs.is_empty()
    }
}

/// Crossing triangle pairs between a garment and a body, sorted.
pub fn detect_intersections(garment: &TriMesh, body: &TriMesh, body_bvh: &Bvh, tol: f64) -> (Vec<(usize, usize)>, usize) {
    let Ok(garment_bvh) = Bvh::build(garment) else {
        return (Vec::new(), 0);
    };
    let candidates = garment_bvh.overlapping_pairs(body_bvh, tol);
    let hits: Vec<((usize, usize), TriTri)> = candidates
        .par_iter()
        .filter_map(|&(gf, bf)| {
            let r = triangles_intersect(&garment.triangle(gf), &body.triangle(bf), tol);
            r.collides().then_some(((gf, bf), r))
        })
        .collect();
    let coplanar = hits.iter().filter(|(_, r)| *r == TriTri::Coplanar).count();
    if coplanar > 0 {
        log::debug!("{coplanar} coplanar garment/body triangle contacts counted as collisions");
    }
    (hits.into_iter().map(|(p, _)| p).collect(), coplanar)
}

/// Runs both detectors and classifies the garment triangles.
pub fn collision_report(garment: &TriMesh, body: &ExactSdf, tol: f64) -> CollisionReport {
    let vf_vertices = detect_vf(garment.vertices(), body, tol);
    let (pairs, coplanar_pairs) = detect_intersections(garment, body.mesh(), body.bvh(), tol);
    let mut penetrating = vec![false; garment.vertex_count()];
    for &v in &vf_vertices {
        penetrating[v] = true;
    }
    let owns = |f: usize| garment.faces()[f].iter().any(|&v| penetrating[v]);
    let vf_triangles: Vec<usize> = (0..garment.face_count()).filter(|&f| owns(f)).collect();
    let crossing: BTreeSet<usize> = pairs.iter().map(|&(g, _)| g).collect();
    let ee_triangles = crossing.into_iter().filter(|&f| !owns(f)).collect();
    CollisionReport {
        vf_vertices,
        pairs,
        vf_triangles,
        ee_triangles,
        coplanar_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [Vec3; 3] {
        [Vec3::from(a), Vec3::from(b), Vec3::from(c)]
    }

    #[test]
    fn piercing_triangles_cross() {
        let a = tri([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        let b = tri([0.5, 0.5, -1.0], [0.5, 0.5, 1.0], [1.5, 0.2, 0.0]);
        assert_eq!(triangles_intersect(&a, &b, CONTACT_TOL), TriTri::Crossing);
        assert_eq!(triangles_intersect(&b, &a, CONTACT_TOL), TriTri::Crossing);
    }

    #[test]
    fn separated_and_touching_triangles_do_not_collide() {
        let a = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let above = tri([0.0, 0.0, 0.1], [1.0, 0.0, 0.2], [0.0, 1.0, 0.3]);
        assert_eq!(triangles_intersect(&a, &above, CONTACT_TOL), TriTri::Disjoint);
        // Shares one vertex with `a` and otherwise lies above it.
        let touching = tri([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]);
        assert_eq!(triangles_intersect(&a, &touching, CONTACT_TOL), TriTri::Disjoint);
    }

    #[test]
    fn coplanar_overlap_is_flagged() {
        let a = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let b = tri([0.2, 0.2, 0.0], [2.0, 0.2, 0.0], [0.2, 2.0, 0.0]);
        assert_eq!(triangles_intersect(&a, &b, CONTACT_TOL), TriTri::Coplanar);
        let far = tri([5.0, 5.0, 0.0], [6.0, 5.0, 0.0], [5.0, 6.0, 0.0]);
        assert_eq!(triangles_intersect(&a, &far, CONTACT_TOL), TriTri::Disjoint);
    }

    #[test]
    fn degenerate_triangle_never_collides() {
        let a = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        let b = tri([0.5, -1.0, -1.0], [0.5, 1.0, -1.0], [0.5, 0.0, 1.0]);
        assert_eq!(triangles_intersect(&a, &b, CONTACT_TOL), TriTri::Disjoint);
    }
}
