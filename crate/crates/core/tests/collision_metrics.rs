mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refu_core::baselines::{naive_postprocess, optimize_postprocess, OptimizeConfig};
use refu_core::collision::{
    collision_report, detect_intersections, detect_vf, triangles_intersect, TriTri, CONTACT_TOL,
};
use refu_core::metrics::{aggregate, local_laplacian_error, mpve, one_ring_region, FrameMetrics};
use refu_core::nn::{Activation, Dense, Mlp};
use refu_core::sdf::{ExactSdf, NeuralSdf, SdfEngine};
use refu_core::{shapes, TriMesh, Vec3};

fn random_triangle<R: Rng>(rng: &mut R) -> [Vec3; 3] {
    [
        common::random_point(rng, 1.0),
        common::random_point(rng, 1.0),
        common::random_point(rng, 1.0),
    ]
}

#[test]
fn triangle_test_agrees_with_edge_crossing_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut hits = 0;
    for _ in 0..20_000 {
        let a = random_triangle(&mut rng);
        let b = random_triangle(&mut rng);
        let expected = common::triangles_cross_by_edges(&a, &b);
        let got = triangles_intersect(&a, &b, CONTACT_TOL);
        assert_eq!(got == TriTri::Crossing, expected, "{a:?} {b:?}");
        hits += expected as usize;
    }
    assert!(hits > 1000);
}

fn perturbed_sphere<R: Rng>(rng: &mut R, radius: f64, noise: f64) -> TriMesh {
    let base = shapes::icosphere(radius, 1);
    let verts = base
        .vertices()
        .iter()
        .map(|v| v + common::random_point(rng, noise))
        .collect();
    base.with_vertices(verts).unwrap()
}

#[test]
fn broad_phase_matches_all_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let body = common::random_blob(&mut rng, 2);
        let sdf = ExactSdf::new(body.clone()).unwrap();
        let radius = rng.gen_range(0.4..0.9);
        let garment = perturbed_sphere(&mut rng, radius, 0.08);
        let (pairs, _) = detect_intersections(&garment, &body, sdf.bvh(), CONTACT_TOL);
        let mut brute = Vec::new();
        for gf in 0..garment.face_count() {
            for bf in 0..body.face_count() {
                if triangles_intersect(&garment.triangle(gf), &body.triangle(bf), CONTACT_TOL).collides() {
                    brute.push((gf, bf));
                }
            }
        }
        assert_eq!(pairs, brute);
    }
}

#[test]
fn vf_detection_matches_ray_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let body = common::random_blob(&mut rng, 2);
    let sdf = ExactSdf::new(body.clone()).unwrap();
    let pts: Vec<Vec3> = (0..300).map(|_| common::random_point(&mut rng, 1.2)).collect();
    let vf = detect_vf(&pts, &sdf, CONTACT_TOL);
    let oracle: Vec<usize> = (0..pts.len()).filter(|&i| common::ray_parity_inside(&body, &pts[i])).collect();
    assert_eq!(vf, oracle);
}

#[test]
fn centroid_vertex_is_the_only_penetration() {
    let sdf = ExactSdf::new(shapes::cube(1.0)).unwrap();
    let pts = vec![Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::new(0.0, -3.0, 0.0)];
    assert_eq!(detect_vf(&pts, &sdf, CONTACT_TOL), vec![1]);
    assert!(detect_vf(&[Vec3::new(0.0, 0.0, 0.7)], &sdf, CONTACT_TOL).is_empty());
}

#[test]
fn pierced_triangle_with_outside_vertices_is_edge_classified() {
    let sdf = ExactSdf::new(shapes::cube(1.0)).unwrap();
    // A large triangle slicing through the cube with every vertex outside.
    let garment = TriMesh::new(
        vec![Vec3::new(-3.0, -3.0, 0.1), Vec3::new(3.0, -3.0, 0.1), Vec3::new(0.0, 3.0, 0.1)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let report = collision_report(&garment, &sdf, CONTACT_TOL);
    assert!(report.vf_vertices.is_empty());
    assert_eq!(report.ee_triangles, vec![0]);
    assert!(report.vf_triangles.is_empty());
    assert!(!report.is_collision_free());
    let outside = garment.with_vertices(garment.vertices().iter().map(|v| v + Vec3::new(0.0, 0.0, 3.0)).collect()).unwrap();
    assert!(collision_report(&outside, &sdf, CONTACT_TOL).is_collision_free());
}

#[test]
fn every_penetrating_vertex_has_a_vf_triangle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let body = common::random_blob(&mut rng, 2);
        let sdf = ExactSdf::new(body).unwrap();
        let garment = perturbed_sphere(&mut rng, 0.7, 0.1);
        let r = collision_report(&garment, &sdf, CONTACT_TOL);
        for &v in &r.vf_vertices {
            assert!(r.vf_triangles.iter().any(|&f| garment.faces()[f].contains(&v)));
        }
    }
}

/// Triangulated `n x n` grid in the z = 0 plane.
fn grid(n: usize, spacing: f64) -> TriMesh {
    let mut verts = Vec::new();
    for j in 0..n {
        for i in 0..n {
            verts.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let mut faces = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            faces.push([a, a + 1, a + n + 1]);
            faces.push([a, a + n + 1, a + n]);
        }
    }
    TriMesh::new(verts, faces).unwrap()
}

#[test]
fn spiked_vertex_laplacian_error_by_hand() {
    let mesh = grid(5, 0.01);
    let truth = mesh.vertices().to_vec();
    let mut pred = truth.clone();
    let v = 12;
    let h = 0.002;
    pred[v].z += h;
    let region = one_ring_region(&mesh, &[v]);
    let ring = mesh.neighbors(v);
    assert_eq!(region.len(), ring.len() + 1);
    // The spiked vertex changes by h; each neighbor u by h / valence(u).
    let expected = (h + ring.iter().map(|&u| h / mesh.neighbors(u).len() as f64).sum::<f64>()) / region.len() as f64;
    let got = local_laplacian_error(&mesh, &pred, &truth, &region).unwrap().unwrap();
    assert!((got - 1000.0 * expected).abs() < 1e-12, "{got} vs {}", 1000.0 * expected);
    assert_eq!(local_laplacian_error(&mesh, &pred, &truth, &[]).unwrap(), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn laplacian_error_ignores_translation(dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0) {
        let mesh = grid(4, 0.1);
        let truth = mesh.vertices().to_vec();
        let t = Vec3::new(dx, dy, dz);
        let pred: Vec<Vec3> = truth.iter().map(|p| p + t).collect();
        let all: Vec<usize> = (0..truth.len()).collect();
        prop_assert!(local_laplacian_error(&mesh, &pred, &truth, &all).unwrap().unwrap() < 1e-9);
    }

    #[test]
    fn mpve_is_invariant_to_shared_relabeling(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec3> = (0..20).map(|_| common::random_point(&mut rng, 1.0)).collect();
        let b: Vec<Vec3> = (0..20).map(|_| common::random_point(&mut rng, 1.0)).collect();
        let mut perm: Vec<usize> = (0..20).collect();
        perm.reverse();
        perm.swap(3, 11);
        let pa: Vec<Vec3> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<Vec3> = perm.iter().map(|&i| b[i]).collect();
        prop_assert!((mpve(&a, &b).unwrap() - mpve(&pa, &pb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn injected_penetrations_never_raise_cfmp(clean in 1usize..10, dirty in 0usize..5, extra in 1usize..5) {
        let f = |free: bool| FrameMetrics {
            mpve_mm: 0.0,
            vertex_count: 10,
            vf_vertices: (!free) as usize,
            vf_triangles: (!free) as usize,
            ee_triangles: 0,
            collision_free: free,
            pen_energy: 0.0,
            lap_err_mm: None,
        };
        let mut frames: Vec<FrameMetrics> = (0..clean).map(|_| f(true)).chain((0..dirty).map(|_| f(false))).collect();
        let before = aggregate(&frames).unwrap().cfmp_pct;
        for fr in frames.iter_mut().take(extra.min(clean)) {
            *fr = f(false);
        }
        prop_assert!(aggregate(&frames).unwrap().cfmp_pct <= before);
    }
}

/// Reports half the true depth below the plane `z = 0`.
fn halved_plane_engine() -> NeuralSdf {
    let layer = Dense::new(ndarray::array![[0.0, 0.0, 0.5]], ndarray::array![0.0], Activation::Identity).unwrap();
    NeuralSdf::new(Arc::new(Mlp::from_layers(3, vec![layer], None).unwrap()), vec![]).unwrap()
}

#[test]
fn underestimating_engine_leaves_residual_penetration() {
    // Body: the half-space z < 0, approximated by a large flat box.
    let body = ExactSdf::new({
        let c = shapes::cube(4.0);
        c.with_vertices(c.vertices().iter().map(|v| v - Vec3::new(0.0, 0.0, 2.0)).collect()).unwrap()
    })
    .unwrap();
    let garment = vec![Vec3::new(0.1, 0.2, -0.01), Vec3::new(-0.3, 0.1, -0.02), Vec3::new(0.0, 0.0, 0.05)];
    let out = naive_postprocess(&garment, &halved_plane_engine());
    let vf = detect_vf(&out.positions, &body, CONTACT_TOL);
    assert_eq!(vf, vec![0, 1]);
    let exact = naive_postprocess(&garment, &body);
    assert!(detect_vf(&exact.positions, &body, CONTACT_TOL).is_empty());
    assert_eq!(exact.positions[2], garment[2]);
}

#[test]
fn optimize_objective_never_increases() {
    let body = ExactSdf::new(shapes::icosphere(0.5, 3)).unwrap();
    let garment = shapes::icosphere(0.52, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let verts: Vec<Vec3> = garment
        .vertices()
        .iter()
        .map(|v| v * (1.0 + rng.gen_range(-0.08..0.03)))
        .collect();
    let garment = garment.with_vertices(verts.clone()).unwrap();
    let r = optimize_postprocess(&garment, &verts, &body, &OptimizeConfig::default());
    assert!(r.iterations > 0);
    assert!(r.objective.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.converged, "violation {}", r.max_violation);
    assert!(detect_vf(&r.positions, &body, CONTACT_TOL).is_empty());
    for p in &r.positions {
        assert!(body.values(&[*p])[0] >= 1e-3 - 1e-6);
    }
}
