//! Competing collision handlers: direct projection, and a projected
//! gradient solve that trades displacement against Laplacian smoothness.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::mesh::{uniform_laplacian, uniform_laplacian_transpose, TriMesh};
use crate::refu::{apply_refu, RefuOutput, DEGENERATE_GRADIENT};
use crate::sdf::SdfEngine;

/// Moves each penetrating vertex onto the surface along the normalized
/// gradient (the layer with `alpha = 1` and no training).
pub fn naive_postprocess(positions: &[Vec3], engine: &dyn SdfEngine) -> RefuOutput {
    apply_refu(positions, engine, &vec![1.0; positions.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub w_lap: f64,
    pub max_iters: usize,
    /// Required clearance in meters.
    pub epsilon: f64,
    /// Largest tolerated `epsilon - f` at convergence.
    pub violation_tol: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            w_lap: 0.5,
            max_iters: 200,
            epsilon: 1e-3,
            violation_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub positions: Vec<Vec3>,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    /// Objective of every accepted iterate, starting with the projection.
    pub objective: Vec<f64>,
}

/// Minimizes `sum |y - x|^2 + w_lap sum |L(y - x)|^2` subject to
/// `f(y_i) >= epsilon`. Starts from the projection of the violators onto
/// the `epsilon` level set and runs projected gradient descent, accepting
/// only strictly decreasing steps and halving the step otherwise.
pub fn optimize_postprocess(
    mesh: &TriMesh,
    positions: &[Vec3],
    engine: &dyn SdfEngine,
    cfg: &OptimizeConfig,
) -> OptimizeResult {
    let n = positions.len();
    let initial = engine.evaluate(positions);
    if initial.iter().all(|s| s.value >= 0.0) {
        return OptimizeResult {
            positions: positions.to_vec(),
            iterations: 0,
            converged: true,
            max_violation: 0.0,
            objective: Vec::new(),
        };
    }
    let objective = |y: &[Vec3]| -> f64 {
        let d: Vec<Vec3> = y.iter().zip(positions).map(|(a, b)| a - b).collect();
        let ld = uniform_laplacian(mesh, &d);
        d.iter().map(|v| v.norm_squared()).sum::<f64>() + cfg.w_lap * ld.iter().map(|v| v.norm_squared()).sum::<f64>()
    };
    let mut f: Vec<f64> = initial.iter().map(|s| s.value).collect();
    let mut y = positions.to_vec();
    let all: Vec<usize> = (0..n).collect();
    project(&mut y, &mut f, &all, engine, cfg.epsilon, Some(&initial));
    let mut energy = objective(&y);
    let mut trace = vec![energy];

    let base_step = 1.0 / (2.0 * (1.0 + 4.0 * cfg.w_lap));
    let mut step = base_step;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let d: Vec<Vec3> = y.iter().zip(positions).map(|(a, b)| a - b).collect();
        let lt = uniform_laplacian_transpose(mesh, &uniform_laplacian(mesh, &d));
        let mut cand = y.clone();
        let mut changed = Vec::new();
        for i in 0..n {
            let g = (d[i] + lt[i] * cfg.w_lap) * 2.0;
            if g != Vec3::zeros() {
                cand[i] -= g * step;
                changed.push(i);
            }
        }
        let mut cand_f = f.clone();
        refresh(&cand, &mut cand_f, &changed, engine);
        project(&mut cand, &mut cand_f, &changed, engine, cfg.epsilon, None);
        let cand_energy = objective(&cand);
        if cand_energy < energy {
            let gain = energy - cand_energy;
            y = cand;
            f = cand_f;
            energy = cand_energy;
            trace.push(energy);
            if gain <= 1e-12 * energy.max(f64::MIN_POSITIVE) {
                break;
            }
        } else {
            step *= 0.5;
            if step < base_step * 1e-6 {
                break;
            }
        }
    }
    let max_violation = f.iter().map(|v| (cfg.epsilon - v).max(0.0)).fold(0.0, f64::max);
    let converged = max_violation < cfg.violation_tol;
    if !converged {
        log::warn!("optimization post-process stopped with violation {max_violation:.3e} m after {iterations} iterations");
    }
    OptimizeResult {
        positions: y,
        iterations,
        converged,
        max_violation,
        objective: trace,
    }
}

fn refresh(y: &[Vec3], f: &mut [f64], idx: &[usize], engine: &dyn SdfEngine) {
    if idx.is_empty() {
        return;
    }
    let pts: Vec<Vec3> = idx.iter().map(|&i| y[i]).collect();
    for (&i, v) in idx.iter().zip(engine.values(&pts)) {
        f[i] = v;
    }
}

/// Moves vertices in `idx` with `f < epsilon` onto the `epsilon` level set
/// along the normalized gradient, then re-evaluates them.
fn project(
    y: &mut [Vec3],
    f: &mut [f64],
    idx: &[usize],
    engine: &dyn SdfEngine,
    epsilon: f64,
    known: Option<&[crate::sdf::SdfValue]>,
) {
    let violators: Vec<usize> = idx.iter().copied().filter(|&i| f[i] < epsilon).collect();
    if violators.is_empty() {
        return;
    }
    let values = match known {
        Some(k) => violators.iter().map(|&i| k[i]).collect(),
        None => engine.evaluate(&violators.iter().map(|&i| y[i]).collect::<Vec<_>>()),
    };
    for (&i, s) in violators.iter().zip(&values) {
        let len = s.gradient.norm();
        if len >= DEGENERATE_GRADIENT {
            y[i] -= s.gradient * ((s.value - epsilon) / len);
        }
    }
    refresh(y, f, &violators, engine);
}
