//! Finite-difference checks for the network derivatives.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refu_core::nn::{Activation, LayerSpec, Mlp, MlpGrads};

const H: f64 = 1e-6;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-8
}

fn sdf_like_net(seed: u64, beta: f64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = Activation::Softplus { beta };
    let specs = [
        LayerSpec::new(12, sp),
        LayerSpec::new(12, sp),
        LayerSpec::new(12, sp),
        LayerSpec::new(1, Activation::Identity),
    ];
    Mlp::new(5, &specs, Some(2), &mut rng).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Central difference of `f` over every parameter.
fn fd_params(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let base = net.flat_parameters();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] += H;
            probe.set_flat_parameters(&p).unwrap();
            let up = f(&probe);
            p[i] -= 2.0 * H;
            probe.set_flat_parameters(&p).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn fd_input(x: &Array2<f64>, f: impl Fn(ArrayView2<f64>) -> f64) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for idx in ndarray::indices(x.raw_dim()) {
        let mut xp = x.clone();
        xp[idx] += H;
        let up = f(xp.view());
        xp[idx] -= 2.0 * H;
        let down = f(xp.view());
        out[idx] = (up - down) / (2.0 * H);
    }
    out
}

fn assert_all_close(analytic: &[f64], numeric: &[f64], rel: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(close(*a, *n, rel), "{what}[{i}]: analytic {a} vs numeric {n}");
    }
}

#[test]
fn reverse_mode_matches_finite_differences() {
    for (seed, act) in [(1u64, Activation::Softplus { beta: 10.0 }), (2, Activation::Relu)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = [
            LayerSpec::new(7, act),
            LayerSpec::new(6, act),
            LayerSpec::new(3, Activation::Identity),
        ];
        let net = Mlp::new(4, &specs, Some(1), &mut rng).unwrap();
        let x = random_batch(&mut rng, 5, 4);
        let w = random_batch(&mut rng, 5, 3);
        let loss = |n: &Mlp, xv: ArrayView2<f64>| (n.forward(xv).unwrap() * &w).sum();
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let (grads, x_bar) = net.backward(&cache, w.view()).unwrap();
        assert_all_close(&grads.flatten(), &fd_params(&net, |n| loss(n, x.view())), 1e-5, "dθ");
        let fx = fd_input(&x, |xv| loss(&net, xv));
        assert_all_close(x_bar.as_slice().unwrap(), fx.as_slice().unwrap(), 1e-5, "dx");
    }
}

#[test]
fn forward_mode_matches_finite_differences() {
    let net = sdf_like_net(3, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let jv = net.input_jacobian_vector(&x, &v).unwrap();
    let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + H * b).collect();
    let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - H * b).collect();
    let fd = (net.forward_one(&xp).unwrap()[0] - net.forward_one(&xm).unwrap()[0]) / (2.0 * H);
    assert!(close(jv[0], fd, 1e-5), "{} vs {fd}", jv[0]);
}

#[test]
fn dual_backward_matches_finite_differences() {
    let net = sdf_like_net(4, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let x = random_batch(&mut rng, 4, 5);
    let v = random_batch(&mut rng, 4, 5);
    let a = random_batch(&mut rng, 4, 1);
    let b = random_batch(&mut rng, 4, 1);
    let objective = |n: &Mlp, xv: ArrayView2<f64>, vv: ArrayView2<f64>| {
        let (y, y_dot, _) = n.forward_dual(xv, vv).unwrap();
        (&y * &a).sum() + (&y_dot * &b).sum()
    };
    let (_, _, cache) = net.forward_dual(x.view(), v.view()).unwrap();
    let (grads, x_bar, v_bar) = net.backward_dual(&cache, a.view(), b.view()).unwrap();
    let fd_theta = fd_params(&net, |n| objective(n, x.view(), v.view()));
    assert_all_close(&grads.flatten(), &fd_theta, 1e-4, "dθ");
    let fx = fd_input(&x, |xv| objective(&net, xv, v.view()));
    assert_all_close(x_bar.as_slice().unwrap(), fx.as_slice().unwrap(), 1e-4, "dx");
    let fv = fd_input(&v, |vv| objective(&net, x.view(), vv));
    assert_all_close(v_bar.as_slice().unwrap(), fv.as_slice().unwrap(), 1e-4, "dv");
}

#[test]
fn hessian_vector_product_matches_gradient_differences() {
    let net = sdf_like_net(5, 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let x = random_batch(&mut rng, 3, 5) * 0.1;
    let w = random_batch(&mut rng, 3, 5);
    let (_, _, cache) = net.forward_dual(x.view(), w.view()).unwrap();
    let zero = Array2::zeros((3, 1));
    let one = Array2::ones((3, 1));
    let (_, hw, _) = net.backward_dual(&cache, zero.view(), one.view()).unwrap();
    let h = 1e-7;
    let (_, gp) = net.input_gradient((&x + &(&w * h)).view()).unwrap();
    let (_, gm) = net.input_gradient((&x - &(&w * h)).view()).unwrap();
    let fd = (gp - gm) / (2.0 * h);
    assert_all_close(hw.as_slice().unwrap(), fd.as_slice().unwrap(), 1e-4, "Hw");
}

/// Eikonal term `(|∇ₓf| - 1)^2` differentiated through the dual pass with
/// tangent `2 (|∇f| - 1) ∇f / |∇f|`.
#[test]
fn eikonal_parameter_gradient_matches_finite_differences() {
    let net = sdf_like_net(6, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let x = random_batch(&mut rng, 6, 5);
    let eikonal = |n: &Mlp| {
        let (_, g) = n.input_gradient(x.view()).unwrap();
        g.rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).powi(2))
            .sum::<f64>()
    };
    let (_, g) = net.input_gradient(x.view()).unwrap();
    let mut u = g.clone();
    for mut row in u.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row *= 2.0 * (norm - 1.0) / norm;
    }
    // d/dθ (∇ₓf · u) = VJP of the gradient map; obtain it by the dual pass
    // with the tangent equal to u.
    let (_, _, cache) = net.forward_dual(x.view(), u.view()).unwrap();
    let zero = Array2::zeros((6, 1));
    let one = Array2::ones((6, 1));
    let (grads, _, _): (MlpGrads, _, _) = net.backward_dual(&cache, zero.view(), one.view()).unwrap();
    assert_all_close(&grads.flatten(), &fd_params(&net, eikonal), 1e-4, "eikonal dθ");
}
