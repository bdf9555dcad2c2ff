//! Learned body SDF `f(x, cond)` where `cond` stacks the body's shape and
//! pose parameters. Covers sampling, the three-term loss, training with
//! resumable checkpoints, and MAE/MRE evaluation.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{EngineKind, ExactSdf, SdfEngine, SdfValue};
use crate::geometry::Vec3;
use crate::mesh::TriMesh;
use crate::nn::{Activation, Adam, AdamConfig, LayerSpec, Mlp, MlpCheckpoint, MlpGrads, NnError};

/// Edge length of the cube (centered at the origin) used for bbox samples.
pub const BBOX_SIZE: f64 = 4.0;
/// Samples with `|s|` below this are left out of the relative error.
pub const MRE_GUARD: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum NeuralSdfError {
    #[error("body mesh is not watertight; SDF labels would be unreliable")]
    NonWatertight,
    #[error("empty training data")]
    Empty,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleCategory {
    BodySurface,
    BodyDisturbed,
    GarmentSurface,
    GarmentDisturbed,
    Bbox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub point: Vec3,
    pub value: f64,
    /// Unit surface normal, only on undisturbed body-surface samples.
    pub normal: Option<Vec3>,
    pub category: SampleCategory,
    pub body: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub body_surface: usize,
    pub body_disturbed: usize,
    pub garment_surface: usize,
    pub garment_disturbed: usize,
    pub bbox: usize,
}

impl SampleCounts {
    pub fn total(&self) -> usize {
        self.body_surface + self.body_disturbed + self.garment_surface + self.garment_disturbed + self.bbox
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfNetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub softplus_beta: f64,
    pub skip: Option<usize>,
    pub cond_dim: usize,
    pub lambda_v: f64,
    pub lambda_sg: f64,
    pub lambda_se: f64,
    pub bodies_per_batch: usize,
    pub points_per_body: usize,
    /// Factor applied to positions and distances before they reach the
    /// network; see [`NeuralSdf::with_scale`].
    #[serde(default = "unit_scale")]
    pub position_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl SdfNetConfig {
    /// 9 x 1024 hidden layers, skip into layer 4, 32 bodies x 4000 points.
    pub fn paper(cond_dim: usize) -> Self {
        Self {
            hidden_layers: 9,
            width: 1024,
            softplus_beta: 100.0,
            skip: Some(4),
            cond_dim,
            lambda_v: 2.0,
            lambda_sg: 1.0,
            lambda_se: 0.1,
            bodies_per_batch: 32,
            points_per_body: 4000,
            position_scale: 1.0,
        }
    }

    /// 4 x 256 hidden layers, skip into layer 2.
    pub fn desk(cond_dim: usize) -> Self {
        Self {
            hidden_layers: 4,
            width: 256,
            skip: Some(2),
            bodies_per_batch: 8,
            points_per_body: 256,
            ..Self::paper(cond_dim)
        }
    }

    pub fn input_dim(&self) -> usize {
        3 + self.cond_dim
    }

    pub fn validate(&self) -> Result<(), NeuralSdfError> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(NeuralSdfError::Config("network needs at least one hidden layer".into()));
        }
        if let Some(k) = self.skip {
            if k == 0 || k >= self.hidden_layers {
                return Err(NeuralSdfError::Config(format!(
                    "skip index {k} must be in 1..{}",
                    self.hidden_layers
                )));
            }
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(NeuralSdfError::Config("position scale must be positive".into()));
        }
        if !(self.lambda_v > 0.0 && self.lambda_sg >= 0.0 && self.lambda_se >= 0.0) {
            return Err(NeuralSdfError::Config("loss weights must be non-negative, lambda_v positive".into()));
        }
        if self.bodies_per_batch == 0 || self.points_per_body == 0 {
            return Err(NeuralSdfError::Config("empty batch".into()));
        }
        Ok(())
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Mlp, NeuralSdfError> {
        self.validate()?;
        let act = Activation::Softplus {
            beta: self.softplus_beta,
        };
        let mut specs: Vec<LayerSpec> = (0..self.hidden_layers).map(|_| LayerSpec::new(self.width, act)).collect();
        specs.push(LayerSpec::new(1, Activation::Identity));
        Ok(Mlp::new(self.input_dim(), &specs, self.skip, rng)?)
    }
}

/// Draws labeled samples around one body. `sigma` is the standard deviation
/// of the isotropic Gaussian disturbance.
pub fn sample_training_points<R: Rng + ?Sized>(
    body: &ExactSdf,
    garment: Option<&TriMesh>,
    counts: &SampleCounts,
    sigma: f64,
    body_id: usize,
    rng: &mut R,
) -> Result<Vec<SdfSample>, NeuralSdfError> {
    if !body.is_watertight() {
        return Err(NeuralSdfError::NonWatertight);
    }
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| NeuralSdfError::Config(e.to_string()))?;
    let mut points: Vec<(Vec3, Option<Vec3>, SampleCategory)> = Vec::with_capacity(counts.total());

    // Disturbed samples perturb the undisturbed ones (cycling), so sigma = 0
    // reproduces the surface set.
    let body_sampler = AreaSampler::new(body.mesh());
    let base: Vec<(Vec3, Option<Vec3>)> = (0..counts.body_surface)
        .map(|_| body_sampler.sample(body.mesh(), Some(body), rng))
        .collect();
    points.extend(base.iter().map(|&(p, n)| (p, n, SampleCategory::BodySurface)));
    for i in 0..counts.body_disturbed {
        let p = match base.get(i % base.len().max(1)) {
            Some(&(p, _)) => p,
            None => body_sampler.sample(body.mesh(), None, rng).0,
        };
        points.push((p + gaussian(&noise, rng), None, SampleCategory::BodyDisturbed));
    }
    if let Some(g) = garment.filter(|g| g.face_count() > 0) {
        let garment_sampler = AreaSampler::new(g);
        let base: Vec<Vec3> = (0..counts.garment_surface)
            .map(|_| garment_sampler.sample(g, None, rng).0)
            .collect();
        points.extend(base.iter().map(|&p| (p, None, SampleCategory::GarmentSurface)));
        for i in 0..counts.garment_disturbed {
            let p = match base.get(i % base.len().max(1)) {
                Some(&p) => p,
                None => garment_sampler.sample(g, None, rng).0,
            };
            points.push((p + gaussian(&noise, rng), None, SampleCategory::GarmentDisturbed));
        }
    }
    let half = BBOX_SIZE / 2.0;
    for _ in 0..counts.bbox {
        let p = Vec3::new(
            rng.gen_range(-half..half),
            rng.gen_range(-half..half),
            rng.gen_range(-half..half),
        );
        points.push((p, None, SampleCategory::Bbox));
    }

    let queries: Vec<Vec3> = points.iter().map(|p| p.0).collect();
    let labels = body.signed_distances(&queries);
    Ok(points
        .into_iter()
        .zip(labels)
        .map(|((point, normal, category), s)| SdfSample {
            point,
            value: s.value,
            normal,
            category,
            body: body_id,
        })
        .collect())
}

fn gaussian<R: Rng + ?Sized>(noise: &Normal<f64>, rng: &mut R) -> Vec3 {
    Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
}

/// Area-weighted face picker for uniform surface sampling.
struct AreaSampler {
    pick: WeightedIndex<f64>,
}

impl AreaSampler {
    fn new(mesh: &TriMesh) -> Self {
        // The tiny floor keeps all-degenerate meshes from failing construction.
        let areas: Vec<f64> = (0..mesh.face_count())
            .map(|f| crate::geometry::triangle_normal(&mesh.triangle(f)).norm() * 0.5 + 1e-300)
            .collect();
        Self {
            pick: WeightedIndex::new(&areas).expect("positive weights"),
        }
    }

    /// Random surface point; with `normals` given, also the barycentric blend
    /// of its angle-weighted vertex normals.
    fn sample<R: Rng + ?Sized>(&self, mesh: &TriMesh, normals: Option<&ExactSdf>, rng: &mut R) -> (Vec3, Option<Vec3>) {
        sample_on_face(mesh, normals, self.pick.sample(rng), rng)
    }
}

fn sample_on_face<R: Rng + ?Sized>(
    mesh: &TriMesh,
    normals: Option<&ExactSdf>,
    face: usize,
    rng: &mut R,
) -> (Vec3, Option<Vec3>) {
    let r1: f64 = rng.gen();
    let r2: f64 = rng.gen();
    let sq = r1.sqrt();
    let w = [1.0 - sq, sq * (1.0 - r2), sq * r2];
    let [a, b, c] = mesh.triangle(face);
    let p = a * w[0] + b * w[1] + c * w[2];
    let n = normals.map(|sdf| {
        let f = mesh.faces()[face];
        let blended = (0..3).fold(Vec3::zeros(), |acc, k| acc + sdf.vertex_normal(f[k]) * w[k]);
        let len = blended.norm();
        if len > 0.0 {
            blended / len
        } else {
            sdf.face_normal(face)
        }
    });
    (p, n)
}

/// Samples every `(body, garment)` pair, tagging samples with the pair index.
pub fn sample_dataset<R: Rng + ?Sized>(
    bodies: &[(ExactSdf, Option<TriMesh>)],
    counts: &SampleCounts,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<SdfSample>, NeuralSdfError> {
    let mut out = Vec::with_capacity(bodies.len() * counts.total());
    for (id, (sdf, garment)) in bodies.iter().enumerate() {
        out.extend(sample_training_points(sdf, garment.as_ref(), counts, sigma, id, rng)?);
    }
    Ok(out)
}

/// Concatenates each sample's position with its body's conditioning vector.
pub fn input_matrix(samples: &[&SdfSample], conds: &[Vec<f64>]) -> Array2<f64> {
    let cond_dim = conds.first().map_or(0, Vec::len);
    let mut x = Array2::zeros((samples.len(), 3 + cond_dim));
    for (r, smp) in samples.iter().enumerate() {
        for k in 0..3 {
            x[[r, k]] = smp.point[k];
        }
        for (k, c) in conds[smp.body].iter().enumerate() {
            x[[r, 3 + k]] = *c;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfLoss {
    pub total: f64,
    pub l_v: f64,
    pub l_sg: f64,
    pub l_se: f64,
    pub grads: MlpGrads,
}

/// `lambda_v * L_v + lambda_sg * L_sg + lambda_se * L_se` with
/// `L_v = mean |f - s|` over all samples, `L_sg = mean |grad f - n|` over
/// samples carrying a normal, `L_se = mean (|grad f| - 1)^2` over the rest.
pub fn sdf_loss(
    net: &Mlp,
    samples: &[&SdfSample],
    conds: &[Vec<f64>],
    cfg: &SdfNetConfig,
) -> Result<SdfLoss, NeuralSdfError> {
    if samples.is_empty() {
        return Err(NeuralSdfError::Empty);
    }
    let x = input_matrix(samples, conds);
    let (f, grad) = net.input_gradient(x.view())?;
    let n = samples.len();
    let n_surface = samples.iter().filter(|s| s.normal.is_some()).count();
    let n_eik = n - n_surface;
    if n_eik == 0 && cfg.lambda_se > 0.0 {
        log::debug!("batch has no off-surface samples; Eikonal term is zero");
    }

    let mut f_bar = Array2::zeros((n, 1));
    let mut tangent = Array2::zeros(x.raw_dim());
    let (mut l_v, mut l_sg, mut l_se) = (0.0, 0.0, 0.0);
    for (i, smp) in samples.iter().enumerate() {
        let r = f[[i, 0]] - smp.value;
        l_v += r.abs();
        f_bar[[i, 0]] = cfg.lambda_v * sign(r) / n as f64;
        let g = Vec3::new(grad[[i, 0]], grad[[i, 1]], grad[[i, 2]]);
        let u = match smp.normal {
            Some(normal) => {
                let d = g - normal;
                let len = d.norm();
                l_sg += len;
                if len > 0.0 {
                    d * (cfg.lambda_sg / (len * n_surface as f64))
                } else {
                    Vec3::zeros()
                }
            }
            None => {
                let len = g.norm();
                l_se += (len - 1.0).powi(2);
                if len > 0.0 {
                    g * (cfg.lambda_se * 2.0 * (len - 1.0) / (len * n_eik as f64))
                } else {
                    Vec3::zeros()
                }
            }
        };
        for k in 0..3 {
            tangent[[i, k]] = u[k];
        }
    }
    l_v /= n as f64;
    if n_surface > 0 {
        l_sg /= n_surface as f64;
    }
    if n_eik > 0 {
        l_se /= n_eik as f64;
    }
    let (_, _, cache) = net.forward_dual(x.view(), tangent.view())?;
    let ones = Array2::ones((n, 1));
    let (grads, _, _) = net.backward_dual(&cache, f_bar.view(), ones.view())?;
    Ok(SdfLoss {
        total: cfg.lambda_v * l_v + cfg.lambda_sg * l_sg + cfg.lambda_se * l_se,
        l_v,
        l_sg,
        l_se,
        grads,
    })
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfEval {
    pub mae: f64,
    /// Percent.
    pub mre: f64,
    pub mre_excluded: usize,
    /// Mean `| |grad f| - 1 |`.
    pub eikonal_dev: f64,
}

pub fn evaluate_sdf(net: &Mlp, samples: &[&SdfSample], conds: &[Vec<f64>]) -> Result<SdfEval, NeuralSdfError> {
    if samples.is_empty() {
        return Err(NeuralSdfError::Empty);
    }
    let mut abs = 0.0;
    let mut rel = 0.0;
    let mut rel_n = 0usize;
    let mut eik = 0.0;
    for chunk in samples.chunks(4096) {
        let x = input_matrix(chunk, conds);
        let (f, g) = net.input_gradient(x.view())?;
        for (i, smp) in chunk.iter().enumerate() {
            let err = (f[[i, 0]] - smp.value).abs();
            abs += err;
            if smp.value.abs() >= MRE_GUARD {
                rel += err / smp.value.abs();
                rel_n += 1;
            }
            let gn = g.slice(s![i, 0..3]);
            eik += (gn.dot(&gn).sqrt() - 1.0).abs();
        }
    }
    let excluded = samples.len() - rel_n;
    if excluded > 0 {
        log::debug!("{excluded} samples with |s| < {MRE_GUARD} excluded from MRE");
    }
    Ok(SdfEval {
        mae: abs / samples.len() as f64,
        mre: if rel_n > 0 { 100.0 * rel / rel_n as f64 } else { 0.0 },
        mre_excluded: excluded,
        eikonal_dev: eik / samples.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfTrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Learning rate reached at the last epoch by cosine decay.
    pub final_lr: f64,
    pub steps_per_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfEpochRecord {
    pub epoch: usize,
    pub l_v: f64,
    pub l_sg: f64,
    pub l_se: f64,
    /// Probe metrics; NaN (null in JSON) for epochs without a probe.
    #[serde(deserialize_with = "nan_if_null")]
    pub mae: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mre: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub eikonal_dev: f64,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Training data: per-body sample pools plus each body's conditioning.
#[derive(Debug, Clone)]
pub struct SdfDataset {
    pub samples: Vec<SdfSample>,
    pub conds: Vec<Vec<f64>>,
}

impl SdfDataset {
    /// Copy with positions and distances multiplied by `scale`, for a
    /// network queried through [`NeuralSdf::with_scale`].
    pub fn scaled(&self, scale: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| SdfSample {
                point: s.point * scale,
                value: s.value * scale,
                ..*s
            })
            .collect();
        Self {
            samples,
            conds: self.conds.clone(),
        }
    }

    fn by_body(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.conds.len()];
        for (i, s) in self.samples.iter().enumerate() {
            pools[s.body].push(i);
        }
        pools
    }
}

#[derive(Debug, Clone)]
pub struct SdfTrainer {
    pub net_config: SdfNetConfig,
    pub train_config: SdfTrainConfig,
    pub net: Mlp,
    pub adam: Adam,
    pub epoch: usize,
    pub seed: u64,
    pub curve: Vec<SdfEpochRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdfTrainerCheckpoint {
    pub format: String,
    pub version: u32,
    pub net_config: SdfNetConfig,
    pub train_config: SdfTrainConfig,
    pub net: MlpCheckpoint,
    pub adam: Adam,
    pub epoch: usize,
    pub seed: u64,
    pub curve: Vec<SdfEpochRecord>,
}

const SDF_CHECKPOINT_FORMAT: &str = "refu-sdf";

impl SdfTrainer {
    pub fn new(net_config: SdfNetConfig, train_config: SdfTrainConfig, seed: u64) -> Result<Self, NeuralSdfError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = net_config.build(&mut rng)?;
        let adam = Adam::for_mlp(train_config.adam, &net);
        Ok(Self {
            net_config,
            train_config,
            net,
            adam,
            epoch: 0,
            seed,
            curve: Vec::new(),
        })
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let lr0 = self.train_config.adam.lr;
        let lr1 = self.train_config.final_lr;
        let span = self.train_config.epochs.saturating_sub(1).max(1) as f64;
        let t = (epoch as f64 / span).min(1.0);
        lr1 + 0.5 * (lr0 - lr1) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.train_config.epochs
    }

    /// One epoch of `steps_per_epoch` Adam steps. Each epoch draws from its
    /// own RNG stream so a resumed run replays the same batches.
    pub fn run_epoch(&mut self, data: &SdfDataset, probe: &[&SdfSample]) -> Result<SdfEpochRecord, NeuralSdfError> {
        if data.samples.is_empty() {
            return Err(NeuralSdfError::Empty);
        }
        let pools = data.by_body();
        let bodies: Vec<usize> = (0..pools.len()).filter(|&b| !pools[b].is_empty()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let lr = self.learning_rate(self.epoch);
        let mut sums = [0.0; 3];
        let steps = self.train_config.steps_per_epoch.max(1);
        for step in 0..steps {
            let chosen: Vec<usize> = bodies
                .choose_multiple(&mut rng, self.net_config.bodies_per_batch.min(bodies.len()))
                .copied()
                .collect();
            let mut batch: Vec<&SdfSample> = Vec::new();
            for b in chosen {
                let pool = &pools[b];
                let take = self.net_config.points_per_body.min(pool.len());
                batch.extend(pool.choose_multiple(&mut rng, take).map(|&i| &data.samples[i]));
            }
            let loss = sdf_loss(&self.net, &batch, &data.conds, &self.net_config)?;
            if !loss.total.is_finite() || !loss.grads.is_finite() {
                return Err(NeuralSdfError::Diverged {
                    epoch: self.epoch,
                    step,
                });
            }
            sums[0] += loss.l_v;
            sums[1] += loss.l_sg;
            sums[2] += loss.l_se;
            self.adam.step_mlp_with_lr(&mut self.net, &loss.grads, lr)?;
        }
        let eval = if probe.is_empty() {
            SdfEval {
                mae: f64::NAN,
                mre: f64::NAN,
                mre_excluded: 0,
                eikonal_dev: f64::NAN,
            }
        } else {
            evaluate_sdf(&self.net, probe, &data.conds)?
        };
        let record = SdfEpochRecord {
            epoch: self.epoch,
            l_v: sums[0] / steps as f64,
            l_sg: sums[1] / steps as f64,
            l_se: sums[2] / steps as f64,
            mae: eval.mae,
            mre: eval.mre,
            eikonal_dev: eval.eikonal_dev,
        };
        log::info!(
            "sdf epoch {} lr {:.2e} L_v {:.4e} L_sg {:.4e} L_se {:.4e} MAE {:.4e}",
            record.epoch,
            lr,
            record.l_v,
            record.l_sg,
            record.l_se,
            record.mae
        );
        self.curve.push(record);
        self.epoch += 1;
        Ok(record)
    }

    pub fn train(&mut self, data: &SdfDataset, probe: &[&SdfSample]) -> Result<(), NeuralSdfError> {
        while !self.is_done() {
            self.run_epoch(data, probe)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> SdfTrainerCheckpoint {
        SdfTrainerCheckpoint {
            format: SDF_CHECKPOINT_FORMAT.into(),
            version: 1,
            net_config: self.net_config.clone(),
            train_config: self.train_config,
            net: MlpCheckpoint::from(&self.net),
            adam: self.adam.clone(),
            epoch: self.epoch,
            seed: self.seed,
            curve: self.curve.clone(),
        }
    }

    pub fn from_checkpoint(ck: SdfTrainerCheckpoint) -> Result<Self, NeuralSdfError> {
        if ck.format != SDF_CHECKPOINT_FORMAT {
            return Err(NeuralSdfError::Config(format!("unknown checkpoint format {:?}", ck.format)));
        }
        let net = Mlp::try_from(ck.net)?;
        if ck.adam.len() != net.parameter_count() {
            return Err(NeuralSdfError::Config("optimizer state does not match network".into()));
        }
        Ok(Self {
            net_config: ck.net_config,
            train_config: ck.train_config,
            net,
            adam: ck.adam,
            epoch: ck.epoch,
            seed: ck.seed,
            curve: ck.curve,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralSdfError> {
        std::fs::write(path, serde_json::to_string(&self.checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralSdfError> {
        let ck: SdfTrainerCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(ck)
    }
}

pub fn curve_csv(curve: &[SdfEpochRecord]) -> String {
    let mut out = String::from("epoch,L_v,L_sg,L_se,MAE,MRE\n");
    for r in curve {
        out.push_str(&format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            r.epoch, r.l_v, r.l_sg, r.l_se, r.mae, r.mre
        ));
    }
    out
}

/// Learned SDF bound to one body's conditioning vector.
#[derive(Debug, Clone)]
pub struct NeuralSdf {
    net: Arc<Mlp>,
    cond: Vec<f64>,
    scale: f64,
}

impl NeuralSdf {
    pub fn new(net: Arc<Mlp>, cond: Vec<f64>) -> Result<Self, NeuralSdfError> {
        Self::with_scale(net, cond, 1.0)
    }

    /// Network trained in coordinates multiplied by `scale`: queries are
    /// scaled on the way in and distances scaled back on the way out.
    pub fn with_scale(net: Arc<Mlp>, cond: Vec<f64>, scale: f64) -> Result<Self, NeuralSdfError> {
        if net.input_dim() != 3 + cond.len() || net.output_dim() != 1 {
            return Err(NeuralSdfError::Config(format!(
                "network takes {} inputs, conditioning has {}",
                net.input_dim(),
                cond.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(NeuralSdfError::Config(format!("position scale must be positive, got {scale}")));
        }
        Ok(Self { net, cond, scale })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn inputs(&self, points: &[Vec3]) -> Array2<f64> {
        let mut x = Array2::zeros((points.len(), 3 + self.cond.len()));
        for (r, p) in points.iter().enumerate() {
            for k in 0..3 {
                x[[r, k]] = p[k] * self.scale;
            }
            for (k, c) in self.cond.iter().enumerate() {
                x[[r, 3 + k]] = *c;
            }
        }
        x
    }

    fn tangents(&self, dirs: &[Vec3]) -> Array2<f64> {
        let mut v = Array2::zeros((dirs.len(), 3 + self.cond.len()));
        for (r, d) in dirs.iter().enumerate() {
            for k in 0..3 {
                v[[r, k]] = d[k];
            }
        }
        v
    }
}

fn row3(m: &ArrayView2<f64>, r: usize) -> Vec3 {
    Vec3::new(m[[r, 0]], m[[r, 1]], m[[r, 2]])
}

impl SdfEngine for NeuralSdf {
    fn kind(&self) -> EngineKind {
        EngineKind::Neural
    }

    fn evaluate(&self, points: &[Vec3]) -> Vec<SdfValue> {
        if points.is_empty() {
            return Vec::new();
        }
        let x = self.inputs(points);
        let (f, g) = self.net.input_gradient(x.view()).expect("dimensions checked at construction");
        let gv = g.view();
        (0..points.len())
            .map(|r| SdfValue {
                value: f[[r, 0]] / self.scale,
                gradient: row3(&gv, r),
            })
            .collect()
    }

    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        if points.is_empty() {
            return Vec::new();
        }
        let x = self.inputs(points);
        let f = self.net.forward(x.view()).expect("dimensions checked at construction");
        f.column(0).iter().map(|v| v / self.scale).collect()
    }

    fn hessian_vector(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<Vec3> {
        if points.is_empty() {
            return Vec::new();
        }
        let x = self.inputs(points);
        let v = self.tangents(dirs);
        let (_, _, cache) = self.net.forward_dual(x.view(), v.view()).expect("dimensions checked");
        let zero = Array2::zeros((points.len(), 1));
        let one = Array2::ones((points.len(), 1));
        let (_, hv, _) = self.net.backward_dual(&cache, zero.view(), one.view()).expect("dimensions checked");
        let hv = hv.view();
        (0..points.len()).map(|r| row3(&hv, r) * self.scale).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use ndarray::array;

    fn constant_net(c: f64, cond_dim: usize) -> Mlp {
        let layer = Dense::new(Array2::zeros((1, 3 + cond_dim)), array![c], Activation::Identity).unwrap();
        Mlp::from_layers(3 + cond_dim, vec![layer], None).unwrap()
    }

    fn sample(p: [f64; 3], s: f64) -> SdfSample {
        SdfSample {
            point: Vec3::new(p[0], p[1], p[2]),
            value: s,
            normal: None,
            category: SampleCategory::Bbox,
            body: 0,
        }
    }

    #[test]
    fn constant_net_regression_term_by_hand() {
        let net = constant_net(0.2, 1);
        let batch = [sample([0.0; 3], 0.5), sample([1.0, 0.0, 0.0], -0.1), sample([0.0, 2.0, 0.0], 0.2)];
        let refs: Vec<&SdfSample> = batch.iter().collect();
        let cfg = SdfNetConfig::desk(1);
        let loss = sdf_loss(&net, &refs, &[vec![0.0]], &cfg).unwrap();
        // |0.2 - 0.5| + |0.2 + 0.1| + |0.2 - 0.2| = 0.6
        assert!((loss.l_v - 0.2).abs() < 1e-15);
        // Zero gradient everywhere: (0 - 1)^2 on each off-surface sample.
        assert!((loss.l_se - 1.0).abs() < 1e-15);
        assert_eq!(loss.l_sg, 0.0);
    }

    #[test]
    fn evaluate_shifted_predictor() {
        let net = constant_net(0.011, 0);
        let batch = [sample([0.0; 3], 0.010), sample([1.0, 0.0, 0.0], 0.010)];
        let refs: Vec<&SdfSample> = batch.iter().collect();
        let e = evaluate_sdf(&net, &refs, &[vec![]]).unwrap();
        assert!((e.mae - 0.001).abs() < 1e-15);
        assert!((e.mre - 10.0).abs() < 1e-9);
    }

    #[test]
    fn skip_index_is_validated() {
        let mut cfg = SdfNetConfig::desk(2);
        cfg.skip = Some(4);
        assert!(cfg.validate().is_err());
        cfg.skip = Some(3);
        assert!(cfg.validate().is_ok());
        assert!(SdfNetConfig::paper(2).validate().is_ok());
    }

    #[test]
    fn neural_engine_rejects_wrong_conditioning() {
        let net = Arc::new(constant_net(0.0, 2));
        assert!(NeuralSdf::new(net.clone(), vec![0.0]).is_err());
        let engine = NeuralSdf::new(net, vec![0.0, 1.0]).unwrap();
        assert_eq!(engine.values(&[Vec3::zeros()]), vec![0.0]);
    }

    #[test]
    fn position_scale_rescales_values_and_curvature() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let specs = [
            LayerSpec::new(16, Activation::Softplus { beta: 10.0 }),
            LayerSpec::new(1, Activation::Identity),
        ];
        let net = Arc::new(Mlp::new(4, &specs, None, &mut rng).unwrap());
        let s = 7.0;
        let scaled = NeuralSdf::with_scale(net.clone(), vec![0.3], s).unwrap();
        let plain = NeuralSdf::new(net, vec![0.3]).unwrap();
        assert!(NeuralSdf::with_scale(scaled.net.clone(), vec![0.3], 0.0).is_err());
        let p = Vec3::new(0.02, -0.05, 0.04);
        let a = scaled.evaluate(&[p])[0];
        let b = plain.evaluate(&[p * s])[0];
        assert!((a.value - b.value / s).abs() < 1e-14);
        assert!((a.gradient - b.gradient).norm() < 1e-12);
        let d = Vec3::new(0.4, -0.1, 0.7);
        let hv = scaled.hessian_vector(&[p], &[d])[0];
        let h = 1e-6;
        let gp = scaled.evaluate(&[p + d * h])[0].gradient;
        let gm = scaled.evaluate(&[p - d * h])[0].gradient;
        let fd = (gp - gm) / (2.0 * h);
        assert!((hv - fd).norm() < 1e-5 * (1.0 + fd.norm()), "{hv} vs {fd}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let t = SdfTrainer::new(
            SdfNetConfig {
                width: 4,
                hidden_layers: 2,
                skip: None,
                ..SdfNetConfig::desk(0)
            },
            SdfTrainConfig {
                epochs: 11,
                adam: AdamConfig::with_lr(1e-3),
                final_lr: 1e-5,
                steps_per_epoch: 1,
            },
            0,
        )
        .unwrap();
        assert!((t.learning_rate(0) - 1e-3).abs() < 1e-18);
        assert!((t.learning_rate(10) - 1e-5).abs() < 1e-18);
        assert!(t.learning_rate(5) < 1e-3 && t.learning_rate(5) > 1e-5);
    }
}
