//! Edge-edge scene: two garment vertices sit just under the ridge of a
//! wedge. Projecting them onto the surface (scale 1) resolves both vertex
//! penetrations but leaves the edge between them cutting through the ridge;
//! only a scale above [`WedgeScene::alpha_min`] clears it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{substream, PipelineError};
use crate::collision::{collision_report, CONTACT_TOL};
use crate::geometry::Vec3;
use crate::mesh::TriMesh;
use crate::nn::AdamConfig;
use crate::refu::{
    apply_refu, AlphaGrads, AlphaOptimizer, AlphaVariant, RangeMode, RefuConfig, RefuLayer, ScaleMode, SdfMode,
};
use crate::sdf::ExactSdf;
use crate::shapes;

/// Ridge height above the base, meters.
pub const RIDGE_HEIGHT: f64 = 0.02;
const HALF_LENGTH: f64 = 0.05;
/// `|x|` of the outer middle-row vertices.
const SIDE_X: f64 = 0.01;
/// `|z|` of the front and back rows.
const ROW_Z: f64 = 0.01;
/// Height of the front and back rows above the ridge.
const ROW_LIFT: f64 = 0.001;

/// Ranges of the scene family: ridge slope, depth of the two inner vertices
/// below the ridge, and their horizontal inset from it.
pub const SLOPE_RANGE: (f64, f64) = (0.35, 0.7);
pub const DEPTH_RANGE: (f64, f64) = (0.002, 0.003);
pub const INSET_RANGE: (f64, f64) = (0.0003, 0.0007);

/// Vertices of the middle row that start inside the body.
pub const INNER: [usize; 2] = [5, 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeScene {
    /// Ridge height over half width.
    pub slope: f64,
    pub depth: f64,
    pub inset: f64,
}

fn to_unit(v: f64, (lo, hi): (f64, f64)) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

impl WedgeScene {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            slope: rng.gen_range(SLOPE_RANGE.0..=SLOPE_RANGE.1),
            depth: rng.gen_range(DEPTH_RANGE.0..=DEPTH_RANGE.1),
            inset: rng.gen_range(INSET_RANGE.0..=INSET_RANGE.1),
        }
    }

    pub fn body(&self) -> TriMesh {
        shapes::wedge_prism(RIDGE_HEIGHT / self.slope, RIDGE_HEIGHT, HALF_LENGTH)
    }

    /// 3 x 4 grid: rows at `z = -ROW_Z, 0, ROW_Z`, columns at
    /// `x = -SIDE_X, -inset, inset, SIDE_X`. Only the middle row dips below
    /// the ridge.
    pub fn garment(&self) -> TriMesh {
        let xs = [-SIDE_X, -self.inset, self.inset, SIDE_X];
        let mut verts = Vec::with_capacity(12);
        for (r, z) in [-ROW_Z, 0.0, ROW_Z].into_iter().enumerate() {
            let y = if r == 1 {
                RIDGE_HEIGHT - self.depth
            } else {
                RIDGE_HEIGHT + ROW_LIFT
            };
            verts.extend(xs.iter().map(|&x| Vec3::new(x, y, z)));
        }
        let mut faces = Vec::new();
        for r in 0..2 {
            for c in 0..3 {
                let a = 4 * r + c;
                faces.push([a, a + 1, a + 5]);
                faces.push([a, a + 5, a + 4]);
            }
        }
        TriMesh::new(verts, faces).expect("grid is valid")
    }

    /// Smallest uniform scale on the two inner vertices that lifts the edge
    /// between them above the ridge.
    pub fn alpha_min(&self) -> f64 {
        let s2 = self.slope * self.slope;
        (1.0 + s2) * self.depth / (self.depth - self.slope * self.inset)
    }

    /// Garment with the inner vertices pushed out along their face normals
    /// by `scale * alpha_min` times their penetration depth.
    pub fn resolved(&self, scale: f64) -> Vec<Vec3> {
        let alpha = scale * self.alpha_min();
        let norm = (1.0 + self.slope * self.slope).sqrt();
        let depth = (self.depth - self.slope * self.inset) / norm;
        let mut verts = self.garment().vertices().to_vec();
        for (k, &i) in INNER.iter().enumerate() {
            let side = if k == 0 { -1.0 } else { 1.0 };
            let n = Vec3::new(side * self.slope, 1.0, 0.0) / norm;
            verts[i] += n * (alpha * depth);
        }
        verts
    }

    /// Scene parameters mapped to `[-1, 1]` over the family ranges.
    pub fn features(&self) -> Vec<f64> {
        vec![
            to_unit(self.slope, SLOPE_RANGE),
            to_unit(self.depth, DEPTH_RANGE),
            to_unit(self.inset, INSET_RANGE),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub steps: usize,
    pub lr: f64,
    pub latent_width: usize,
    pub vertex_latent: usize,
    pub g_hidden: usize,
    /// Ground truth uses `margin * alpha_min`.
    pub margin: f64,
}

impl Default for WedgeConfig {
    fn default() -> Self {
        Self {
            train_scenes: 64,
            test_scenes: 32,
            steps: 400,
            lr: 3e-3,
            latent_width: 16,
            vertex_latent: 4,
            g_hidden: 10,
            margin: 1.25,
        }
    }
}

struct Prepared {
    scene: WedgeScene,
    body: ExactSdf,
    mesh: TriMesh,
    truth: Vec<Vec3>,
}

fn prepare(scenes: &[WedgeScene], margin: f64) -> Result<Vec<Prepared>, PipelineError> {
    scenes
        .iter()
        .map(|s| {
            let body = ExactSdf::new(s.body()).map_err(|e| PipelineError::Generation(e.to_string()))?;
            Ok(Prepared {
                scene: *s,
                body,
                mesh: s.garment(),
                truth: s.resolved(margin),
            })
        })
        .collect()
}

/// Trains a predicted-scale layer (exact SDF, `alpha >= 1`) to reproduce the
/// resolved scenes. Loss is the squared vertex error in mm^2.
pub fn train_wedge_layer(cfg: &WedgeConfig, seed: u64) -> Result<(RefuLayer, Vec<f64>), PipelineError> {
    let mut rng = substream(seed, "wedge/scenes/train");
    let scenes: Vec<WedgeScene> = (0..cfg.train_scenes).map(|_| WedgeScene::sample(&mut rng)).collect();
    let data = prepare(&scenes, cfg.margin)?;
    let config = RefuConfig {
        param_dim: 3,
        latent_width: cfg.latent_width,
        vertex_latent: cfg.vertex_latent,
        g_hidden: cfg.g_hidden,
        vertex_count: 12,
        scale_mode: ScaleMode::Predicted,
        range_mode: RangeMode::Acc,
        sdf_mode: SdfMode::Acc,
        variant: AlphaVariant::Main,
        sdf_input_scale: 1000.0,
    };
    let mut layer = RefuLayer::new(config, &mut substream(seed, "wedge/init"))?;
    let mut opt = AlphaOptimizer::new(
        AdamConfig::with_lr(cfg.lr),
        layer.nets.as_ref().expect("predicted scale has networks"),
    );
    let mut curve = Vec::with_capacity(cfg.steps);
    let inv = 1.0 / data.len().max(1) as f64;
    for step in 0..cfg.steps {
        let mut total: Option<AlphaGrads> = None;
        let mut loss = 0.0;
        for d in &data {
            let x = d.mesh.vertices();
            let fwd = layer.forward(&d.scene.features(), x, &d.body)?;
            let w: Vec<Vec3> = fwd
                .output
                .positions
                .iter()
                .zip(&d.truth)
                .map(|(y, t)| {
                    let e = (y - t) * 1000.0;
                    loss += e.norm_squared() * inv;
                    e * 2000.0 * inv
                })
                .collect();
            let (_, g) = layer.backward(&fwd, x, &d.body, &w)?;
            let g = g.expect("predicted scale has gradients");
            match &mut total {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
        if !loss.is_finite() {
            return Err(PipelineError::Diverged {
                stage: "wedge".into(),
                epoch: 0,
                step,
            });
        }
        if let (Some(g), Some(nets)) = (total, layer.nets.as_mut()) {
            opt.step(nets, &g, cfg.lr)?;
        }
        curve.push(loss);
    }
    Ok((layer, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WedgeReport {
    pub scenes: usize,
    /// Mean EE-only garment triangles per scene.
    pub fixed_avg_ee: f64,
    pub fixed_avg_vf: f64,
    pub predicted_avg_ee: f64,
    pub predicted_avg_vf: f64,
    /// Mean predicted scale over the inner vertices, and the mean of their
    /// `alpha_min`.
    pub predicted_mean_alpha: f64,
    pub mean_alpha_min: f64,
    pub final_loss: f64,
}

/// Trains on one draw of the family and compares scale 1 with the trained
/// layer on held-out scenes.
pub fn run_wedge_experiment(cfg: &WedgeConfig, seed: u64) -> Result<WedgeReport, PipelineError> {
    let (layer, curve) = train_wedge_layer(cfg, seed)?;
    let mut rng = substream(seed, "wedge/scenes/test");
    let scenes: Vec<WedgeScene> = (0..cfg.test_scenes).map(|_| WedgeScene::sample(&mut rng)).collect();
    let data = prepare(&scenes, cfg.margin)?;
    let n = data.len().max(1) as f64;
    let mut r = WedgeReport {
        scenes: data.len(),
        fixed_avg_ee: 0.0,
        fixed_avg_vf: 0.0,
        predicted_avg_ee: 0.0,
        predicted_avg_vf: 0.0,
        predicted_mean_alpha: 0.0,
        mean_alpha_min: 0.0,
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
    };
    for d in &data {
        let x = d.mesh.vertices();
        let fixed = apply_refu(x, &d.body, &[1.0; 12]);
        let rep = collision_report(&d.mesh.with_vertices(fixed.positions)?, &d.body, CONTACT_TOL);
        r.fixed_avg_ee += rep.ee_triangles.len() as f64 / n;
        r.fixed_avg_vf += rep.vf_triangles.len() as f64 / n;
        let out = layer.forward(&d.scene.features(), x, &d.body)?.output;
        for &i in &INNER {
            r.predicted_mean_alpha += out.alpha[i] / (2.0 * n);
        }
        r.mean_alpha_min += d.scene.alpha_min() / n;
        let rep = collision_report(&d.mesh.with_vertices(out.positions)?, &d.body, CONTACT_TOL);
        r.predicted_avg_ee += rep.ee_triangles.len() as f64 / n;
        r.predicted_avg_vf += rep.vf_triangles.len() as f64 / n;
    }
    Ok(r)
}

/// The scene used in the documentation: slope 0.5, depth 2.5 mm, inset
/// 0.5 mm (`alpha_min` = 1.389).
pub fn reference_scene() -> WedgeScene {
    WedgeScene {
        slope: 0.5,
        depth: 0.0025,
        inset: 0.0005,
    }
}
