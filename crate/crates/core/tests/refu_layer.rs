mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refu_core::refu::{
    apply_refu, refu_backward, AlphaNetworks, AlphaVariant, RangeMode, RefuConfig, RefuLayer, SdfMode,
};
use refu_core::sdf::{ExactSdf, NeuralSdf, SdfEngine, SdfNetConfig, SphereSdf};
use refu_core::{shapes, Vec3};

fn small_config(variant: AlphaVariant, n: usize) -> RefuConfig {
    RefuConfig {
        latent_width: 6,
        vertex_latent: 3,
        g_hidden: 5,
        variant,
        ..RefuConfig::desk(4, n, SdfMode::Approx)
    }
}

/// Tiny learned SDF whose zero level set sits roughly at radius 0.5.
fn small_neural_sdf(seed: u64) -> NeuralSdf {
    let cfg = SdfNetConfig {
        hidden_layers: 2,
        width: 6,
        softplus_beta: 5.0,
        skip: Some(1),
        ..SdfNetConfig::desk(1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = cfg.build(&mut rng).unwrap();
    let probe = NeuralSdf::new(Arc::new(net.clone()), vec![0.2]).unwrap();
    let at_center = probe.values(&[Vec3::zeros()])[0];
    net.layers_mut().last_mut().unwrap().bias[0] -= at_center + 0.5;
    NeuralSdf::new(Arc::new(net), vec![0.2]).unwrap()
}

/// Points kept away from the zero level set so finite differences do not
/// cross the moved/unmoved switch.
fn scene(engine: &dyn SdfEngine, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    while pts.len() < n {
        let p = common::random_point(&mut rng, 0.6);
        if engine.values(&[p])[0].abs() > 0.02 {
            pts.push(p);
        }
    }
    pts
}

fn layer_loss(layer: &RefuLayer, params: &[f64], x: &[Vec3], engine: &dyn SdfEngine, w: &[Vec3]) -> f64 {
    let fwd = layer.forward(params, x, engine).unwrap();
    fwd.output.positions.iter().zip(w).map(|(p, c)| p.dot(c)).sum()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-8
}

#[test]
fn neural_path_gradients_match_finite_differences() {
    for variant in [AlphaVariant::Main, AlphaVariant::SharedLatent, AlphaVariant::SdfOnly] {
        let engine = small_neural_sdf(3);
        let n = 8;
        let x = scene(&engine, n, 4);
        let moved = engine.values(&x).iter().filter(|f| **f < 0.0).count();
        assert!(moved >= 2, "scene needs penetrating vertices");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = RefuLayer::new(small_config(variant, n), &mut rng).unwrap();
        let params: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<Vec3> = (0..n).map(|_| common::random_point(&mut rng, 1.0)).collect();

        let fwd = layer.forward(&params, &x, &engine).unwrap();
        let (x_bar, grads) = layer.backward(&fwd, &x, &engine, &w).unwrap();
        let analytic = grads.unwrap().flatten();

        let nets = layer.nets.as_ref().unwrap();
        let base = nets.flat_parameters();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut probe = layer.clone();
            let mut p = base.clone();
            p[i] += h;
            probe.nets.as_mut().unwrap().set_flat_parameters(&p).unwrap();
            let up = layer_loss(&probe, &params, &x, &engine, &w);
            p[i] -= 2.0 * h;
            probe.nets.as_mut().unwrap().set_flat_parameters(&p).unwrap();
            let down = layer_loss(&probe, &params, &x, &engine, &w);
            let fd = (up - down) / (2.0 * h);
            assert!(close(analytic[i], fd, 1e-4), "{variant:?} weight {i}: {} vs {fd}", analytic[i]);
        }
        for i in 0..n {
            for k in 0..3 {
                let mut xp = x.clone();
                xp[i][k] += h;
                let up = layer_loss(&layer, &params, &xp, &engine, &w);
                xp[i][k] -= 2.0 * h;
                let down = layer_loss(&layer, &params, &xp, &engine, &w);
                let fd = (up - down) / (2.0 * h);
                assert!(close(x_bar[i][k], fd, 1e-4), "{variant:?} x[{i}][{k}]: {} vs {fd}", x_bar[i][k]);
            }
        }
    }
}

#[test]
fn global_latent_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let nets = AlphaNetworks::new(&small_config(AlphaVariant::Main, 5), &mut rng).unwrap();
    let params: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, cache) = nets.forward(&params, &f).unwrap();
    let back = nets.backward(&cache, &c).unwrap();
    let objective = |p: &[f64], fv: &[f64]| -> f64 {
        nets.alpha(p, fv).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    for i in 0..4 {
        let mut pp = params.clone();
        pp[i] += h;
        let up = objective(&pp, &f);
        pp[i] -= 2.0 * h;
        let fd = (up - objective(&pp, &f)) / (2.0 * h);
        assert!(close(back.params_bar[i], fd, 1e-5), "{} vs {fd}", back.params_bar[i]);
    }
    for i in 0..5 {
        let mut fp = f.clone();
        fp[i] += h;
        let up = objective(&params, &fp);
        fp[i] -= 2.0 * h;
        let fd = (up - objective(&params, &fp)) / (2.0 * h);
        assert!(close(back.f_bar[i], fd, 1e-5));
    }
    // The latent itself is deterministic.
    assert_eq!(nets.global_latent(&params).unwrap(), nets.global_latent(&params).unwrap());
}

/// For a sphere, `x' = x - alpha (r - R) x / r`, whose Jacobian is
/// `I - alpha [n n^T + (r - R)/r (I - n n^T)]`.
#[test]
fn fixed_alpha_cotangent_matches_sphere_jacobian() {
    let sphere = SphereSdf {
        center: Vec3::zeros(),
        radius: 1.0,
    };
    let x = vec![Vec3::new(0.2, -0.3, 0.4), Vec3::new(1.5, 0.0, 0.0)];
    let alpha = vec![1.7, 1.7];
    let out = apply_refu(&x, &sphere, &alpha);
    let w = vec![Vec3::new(0.3, 1.0, -0.5), Vec3::new(-2.0, 0.1, 0.4)];
    let back = refu_backward(&out, &x, &sphere, &w);
    let r = x[0].norm();
    let n = x[0] / r;
    let nnt = n * n.transpose();
    let jac = nalgebra::Matrix3::identity() - (nnt + (nalgebra::Matrix3::identity() - nnt) * ((r - 1.0) / r)) * alpha[0];
    let expected = jac.transpose() * w[0];
    assert!((back.positions_bar[0] - expected).norm() < 1e-12);
    assert_eq!(back.positions_bar[1], w[1]);
    assert_eq!(back.alpha_bar[1], 0.0);
    assert!((back.alpha_bar[0] + w[0].dot(&n) * (r - 1.0)).abs() < 1e-12);
}

#[test]
fn acc_mode_with_saturated_g_degenerates_to_fixed_scale() {
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = RefuConfig {
        range_mode: RangeMode::Acc,
        ..small_config(AlphaVariant::Main, n)
    };
    let mut layer = RefuLayer::new(cfg.clone(), &mut rng).unwrap();
    let g = &mut layer.nets.as_mut().unwrap().g;
    let last = g.layers_mut().last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(-800.0);
    let sdf = ExactSdf::new(shapes::icosphere(0.5, 2)).unwrap();
    let x = scene(&sdf, n, 8);
    let predicted = layer.forward(&[0.0; 4], &x, &sdf).unwrap().output;
    let fixed = RefuLayer::fixed(cfg).forward(&[0.0; 4], &x, &sdf).unwrap().output;
    assert_eq!(predicted.positions, fixed.positions);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_input_is_a_fixed_point(r in 1.01f64..3.0, a in 0.0f64..5.0, theta in 0.0f64..std::f64::consts::TAU) {
        let sphere = SphereSdf { center: Vec3::zeros(), radius: 1.0 };
        let x = vec![Vec3::new(r * theta.cos(), r * theta.sin(), 0.1)];
        let out = apply_refu(&x, &sphere, &[a]);
        prop_assert_eq!(&out.positions, &x);
    }

    #[test]
    fn displacement_grows_with_alpha(r in 0.05f64..0.95, a in 0.0f64..4.0, da in 1e-3f64..2.0) {
        let sphere = SphereSdf { center: Vec3::zeros(), radius: 1.0 };
        let x = vec![Vec3::new(r, 0.0, 0.0)];
        let lo = apply_refu(&x, &sphere, &[a]).positions[0];
        let hi = apply_refu(&x, &sphere, &[a + da]).positions[0];
        prop_assert!((hi - x[0]).norm() > (lo - x[0]).norm());
    }

    #[test]
    fn acc_range_on_convex_body_clears_penetration(seed in 0u64..1000, a in 1.0f64..3.0) {
        let sdf = ExactSdf::new(shapes::cube(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec3> = (0..5).map(|_| common::random_point(&mut rng, 0.8)).collect();
        let out = apply_refu(&x, &sdf, &[a; 5]);
        for p in &out.positions {
            prop_assert!(sdf.signed_distance(p).value >= -1e-8);
        }
    }
}
