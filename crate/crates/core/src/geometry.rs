//! Small geometric primitives: boxes and point-to-triangle projection.

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_triangle(tri: &[Vec3; 3]) -> Self {
        Self {
            min: tri[0].inf(&tri[1]).inf(&tri[2]),
            max: tri[0].sup(&tri[1]).sup(&tri[2]),
        }
    }

    pub fn grow_point(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && self.max[k] >= other.max[k])
    }

    pub fn overlaps(&self, other: &Aabb, pad: f64) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] + pad && other.min[k] <= self.max[k] + pad)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = p[k];
            if v < self.min[k] {
                d2 += (self.min[k] - v).powi(2);
            } else if v > self.max[k] {
                d2 += (v - self.max[k]).powi(2);
            }
        }
        d2
    }
}

/// Which part of a triangle a closest point lies on. Indices are local
/// (0, 1, 2) corner numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangleFeature {
    Vertex(u8),
    /// Edge between corners `(a, b)` with `a < b`.
    Edge(u8, u8),
    Face,
}

#[derive(Debug, Clone, Copy)]
pub struct TriangleProjection {
    pub point: Vec3,
    pub barycentric: [f64; 3],
    pub feature: TriangleFeature,
    pub distance_squared: f64,
}

/// Closest point on triangle `abc` to `p` by Voronoi-region classification.
/// Barycentric coordinates are exactly zero on edge and vertex regions.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> TriangleProjection {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return finish(p, *a, [1.0, 0.0, 0.0], TriangleFeature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return finish(p, *b, [0.0, 1.0, 0.0], TriangleFeature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return finish(p, a + ab * v, [1.0 - v, v, 0.0], TriangleFeature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return finish(p, *c, [0.0, 0.0, 1.0], TriangleFeature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return finish(p, a + ac * w, [1.0 - w, 0.0, w], TriangleFeature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return finish(p, b + (c - b) * w, [0.0, 1.0 - w, w], TriangleFeature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    if !(v.is_finite() && w.is_finite()) {
        // Zero-area triangle that slipped past the edge tests: fall back to
        // the nearest of its three edges.
        return degenerate_fallback(p, a, b, c);
    }
    finish(p, a + ab * v + ac * w, [1.0 - v - w, v, w], TriangleFeature::Face)
}

fn finish(p: &Vec3, point: Vec3, barycentric: [f64; 3], feature: TriangleFeature) -> TriangleProjection {
    TriangleProjection {
        point,
        barycentric,
        feature,
        distance_squared: (p - point).norm_squared(),
    }
}

fn degenerate_fallback(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> TriangleProjection {
    let corners = [a, b, c];
    let mut best: Option<TriangleProjection> = None;
    for (i, j) in [(0u8, 1u8), (0, 2), (1, 2)] {
        let (s, e) = (corners[i as usize], corners[j as usize]);
        let d = e - s;
        let len2 = d.norm_squared();
        let t = if len2 > 0.0 { ((p - s).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let mut bary = [0.0; 3];
        let feature = if t == 0.0 {
            bary[i as usize] = 1.0;
            TriangleFeature::Vertex(i)
        } else if t == 1.0 {
            bary[j as usize] = 1.0;
            TriangleFeature::Vertex(j)
        } else {
            bary[i as usize] = 1.0 - t;
            bary[j as usize] = t;
            TriangleFeature::Edge(i, j)
        };
        let cand = finish(p, s + d * t, bary, feature);
        if best.is_none_or(|b| cand.distance_squared < b.distance_squared) {
            best = Some(cand);
        }
    }
    best.expect("three candidates")
}

/// Unnormalized normal `(b - a) x (c - a)`.
pub fn triangle_normal(tri: &[Vec3; 3]) -> Vec3 {
    (tri[1] - tri[0]).cross(&(tri[2] - tri[0]))
}

/// Interior angle at corner `k`.
pub fn corner_angle(tri: &[Vec3; 3], k: usize) -> f64 {
    let p = tri[k];
    let u = tri[(k + 1) % 3] - p;
    let v = tri[(k + 2) % 3] - p;
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    u.cross(&v).norm().atan2(u.dot(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
        // Dense barycentric grid plus exact edge projections.
        let mut best = f64::INFINITY;
        let n = 200;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let u = i as f64 / n as f64;
                let v = j as f64 / n as f64;
                let q = a + (b - a) * u + (c - a) * v;
                best = best.min((p - q).norm_squared());
            }
        }
        best
    }

    #[test]
    fn projection_is_never_worse_than_sampled_points() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.2, 0.1);
        let c = Vec3::new(0.3, 1.1, -0.2);
        for p in [
            Vec3::new(0.3, 0.3, 0.5),
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.5, -0.5, 0.3),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(0.0, 2.0, 0.0),
        ] {
            let proj = closest_point_on_triangle(&p, &a, &b, &c);
            assert!(proj.distance_squared <= brute(&p, &a, &b, &c) + 1e-12);
            let s: f64 = proj.barycentric.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(proj.barycentric.iter().all(|&w| w >= 0.0));
            let rebuilt = a * proj.barycentric[0] + b * proj.barycentric[1] + c * proj.barycentric[2];
            assert!((rebuilt - proj.point).norm() < 1e-12);
        }
    }

    #[test]
    fn above_interior_is_plane_distance() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.5, 3f64.sqrt() / 2.0, 0.0);
        let centroid = (a + b + c) / 3.0;
        let p = centroid + Vec3::new(0.0, 0.0, 0.7);
        let proj = closest_point_on_triangle(&p, &a, &b, &c);
        assert_eq!(proj.feature, TriangleFeature::Face);
        assert!((proj.distance_squared.sqrt() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn coincident_vertex() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let proj = closest_point_on_triangle(&b, &a, &b, &c);
        assert_eq!(proj.feature, TriangleFeature::Vertex(1));
        assert_eq!(proj.distance_squared, 0.0);
        assert_eq!(proj.point, b);
    }

    #[test]
    fn degenerate_triangle_falls_back_to_segment() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(2.0, 0.0, 0.0);
        let p = Vec3::new(1.5, 1.0, 0.0);
        let proj = closest_point_on_triangle(&p, &a, &b, &c);
        assert!((proj.distance_squared - 1.0).abs() < 1e-12);
    }
}
