//! Test-side oracles written independently of the library's geometry code.
#![allow(dead_code)]

use rand::Rng;
use refu_core::{shapes, TriMesh, Vec3};

/// Distance from `p` to segment `ab`.
pub fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Point-triangle distance: plane distance when the foot lies inside the
/// triangle (same-side tests), otherwise the nearest edge.
pub fn triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = (b - a).cross(&(c - a));
    let nn = n.norm();
    let edges = segment_distance(p, a, b)
        .min(segment_distance(p, b, c))
        .min(segment_distance(p, c, a));
    if nn == 0.0 {
        return edges;
    }
    let n = n / nn;
    let h = (p - a).dot(&n);
    let foot = p - n * h;
    let inside = [(a, b), (b, c), (c, a)]
        .iter()
        .all(|(u, v)| (*v - *u).cross(&(foot - *u)).dot(&n) >= 0.0);
    if inside {
        h.abs()
    } else {
        edges
    }
}

pub fn brute_force_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            triangle_distance(p, &a, &b, &c)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Ray/triangle hit distance, or `None`. Hits too close to an edge are
/// reported as `Err` so the caller can pick another direction.
fn ray_hit(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Result<Option<f64>, ()> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = d.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-14 {
        return Ok(None);
    }
    let inv = 1.0 / det;
    let tv = o - a;
    let u = tv.dot(&pv) * inv;
    let qv = tv.cross(&e1);
    let v = d.dot(&qv) * inv;
    let t = e2.dot(&qv) * inv;
    let eps = 1e-9;
    if u < -eps || v < -eps || u + v > 1.0 + eps || t < -eps {
        return Ok(None);
    }
    if u < eps || v < eps || u + v > 1.0 - eps || t < eps {
        return Err(());
    }
    Ok(Some(t))
}

/// Containment by counting ray crossings; retries directions that graze an
/// edge or vertex.
pub fn ray_parity_inside(mesh: &TriMesh, p: &Vec3) -> bool {
    let dirs = [
        Vec3::new(0.5773, 0.5774, 0.5772),
        Vec3::new(-0.3120, 0.8410, 0.4420),
        Vec3::new(0.7072, -0.1234, -0.6963),
        Vec3::new(-0.2222, -0.3333, 0.9161),
        Vec3::new(0.1111, 0.9876, -0.1098),
    ];
    'dir: for d in dirs {
        let d = d.normalize();
        let mut hits = 0usize;
        for f in 0..mesh.face_count() {
            let [a, b, c] = mesh.triangle(f);
            match ray_hit(p, &d, &a, &b, &c) {
                Ok(Some(_)) => hits += 1,
                Ok(None) => {}
                Err(()) => continue 'dir,
            }
        }
        return hits % 2 == 1;
    }
    panic!("no clean ray direction for {p:?}");
}

/// Star-shaped watertight blob with a few random low-frequency bumps.
pub fn random_blob<R: Rng>(rng: &mut R, subdivisions: usize) -> TriMesh {
    let center = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let base = rng.gen_range(0.4..0.9);
    let bumps: Vec<(Vec3, f64)> = (0..4)
        .map(|_| {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            (d.normalize(), rng.gen_range(-0.15..0.15))
        })
        .collect();
    let blob = shapes::radial_mesh(subdivisions, |d| {
        base + bumps.iter().map(|(b, amp)| amp * d.dot(b).powi(2)).sum::<f64>()
    });
    let verts = blob.vertices().iter().map(|v| v + center).collect();
    blob.with_vertices(verts).unwrap()
}

pub fn random_point<R: Rng>(rng: &mut R, half: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half))
}

fn orient3d(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a))
}

/// Strict segment/triangle crossing from orientation signs.
pub fn segment_crosses_triangle(p: &Vec3, q: &Vec3, t: &[Vec3; 3]) -> bool {
    let sp = orient3d(&t[0], &t[1], &t[2], p);
    let sq = orient3d(&t[0], &t[1], &t[2], q);
    if sp * sq >= 0.0 {
        return false;
    }
    let s0 = orient3d(p, q, &t[0], &t[1]);
    let s1 = orient3d(p, q, &t[1], &t[2]);
    let s2 = orient3d(p, q, &t[2], &t[0]);
    (s0 > 0.0 && s1 > 0.0 && s2 > 0.0) || (s0 < 0.0 && s1 < 0.0 && s2 < 0.0)
}

/// Two triangles in general position intersect iff an edge of one crosses
/// the other.
pub fn triangles_cross_by_edges(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    (0..3).any(|k| segment_crosses_triangle(&a[k], &a[(k + 1) % 3], b))
        || (0..3).any(|k| segment_crosses_triangle(&b[k], &b[(k + 1) % 3], a))
}
