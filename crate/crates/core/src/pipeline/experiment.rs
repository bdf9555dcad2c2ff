//! Experiment orchestration: config, the learned body SDF stage, model
//! training for every requested method, test-set evaluation and the report
//! files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneCheckpoint, BackboneConfig};
use super::body::PARAM_DIM;
use super::data::{Dataset, DatasetSpec, GarmentFrame, Split};
use super::train::{
    frame_engine, train_backbone, train_refu, EpochStats, LearnedSdf, LossWeights, RefuModel, RefuModelCheckpoint, TrainConfig,
    TrainContext,
};
use super::{json_hash, substream, PipelineError};
use crate::baselines::{naive_postprocess, optimize_postprocess, OptimizeConfig};
use crate::collision::{collision_report, CONTACT_TOL};
use crate::geometry::Vec3;
use crate::metrics::{
    aggregate, histogram, local_laplacian_error, mpve, one_ring_region, penetration_energy, FrameMetrics, Histogram,
    MetricsSummary,
};
use crate::nn::AdamConfig;
use crate::refu::{AlphaVariant, RefuConfig, RefuLayer, ScaleMode, SdfMode};
use crate::sdf::{
    evaluate_sdf, sample_dataset, SampleCategory, SampleCounts, SdfDataset, SdfEval, SdfEngine, SdfNetConfig,
    SdfSample, SdfTrainConfig, SdfTrainer,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    /// Ground truth passed through unchanged; a pipeline sanity check.
    GroundTruth,
    Backbone,
    Naive,
    Optimize,
    CollisionLoss,
    Refu,
}

/// One evaluated method. Written and parsed as a tag such as `backbone`,
/// `naive-acc`, `collision-loss-acc`, `refu-hybrid`, `refu-fixed-acc` or
/// `refu-alt1-acc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub sdf_mode: Option<SdfMode>,
    pub scale_mode: ScaleMode,
    pub variant: AlphaVariant,
}

impl MethodSpec {
    pub fn plain(kind: MethodKind) -> Self {
        Self {
            kind,
            sdf_mode: None,
            scale_mode: ScaleMode::Fixed,
            variant: AlphaVariant::Main,
        }
    }

    pub fn with_mode(kind: MethodKind, mode: SdfMode) -> Self {
        Self {
            sdf_mode: Some(mode),
            ..Self::plain(kind)
        }
    }

    pub fn refu(mode: SdfMode, variant: AlphaVariant) -> Self {
        Self {
            kind: MethodKind::Refu,
            sdf_mode: Some(mode),
            scale_mode: ScaleMode::Predicted,
            variant,
        }
    }

    pub fn refu_fixed(mode: SdfMode) -> Self {
        Self {
            scale_mode: ScaleMode::Fixed,
            ..Self::refu(mode, AlphaVariant::Main)
        }
    }

    /// The `method` column of the metrics table.
    pub fn method_label(&self) -> String {
        match self.kind {
            MethodKind::GroundTruth => "ground-truth".into(),
            MethodKind::Backbone => "backbone".into(),
            MethodKind::Naive => "naive".into(),
            MethodKind::Optimize => "optimize".into(),
            MethodKind::CollisionLoss => "collision-loss".into(),
            MethodKind::Refu => match (self.scale_mode, self.variant) {
                (ScaleMode::Fixed, _) => "refu-fixed".into(),
                (ScaleMode::Predicted, AlphaVariant::Main) => "refu".into(),
                (ScaleMode::Predicted, AlphaVariant::SharedLatent) => "refu-alt1".into(),
                (ScaleMode::Predicted, AlphaVariant::SdfOnly) => "refu-alt2".into(),
            },
        }
    }

    /// The `sdf_mode` column: `none` for methods without an SDF.
    pub fn sdf_label(&self) -> &'static str {
        self.sdf_mode.map_or("none", SdfMode::as_str)
    }

    fn needs_mode(kind: MethodKind) -> bool {
        !matches!(kind, MethodKind::GroundTruth | MethodKind::Backbone)
    }

    /// Whether any stage of this method queries the learned SDF.
    pub fn uses_neural(&self) -> bool {
        match (self.kind, self.sdf_mode) {
            (MethodKind::Naive | MethodKind::Optimize, Some(m)) => m.layer_uses_neural(),
            (MethodKind::CollisionLoss, Some(m)) => m.loss_uses_neural(),
            (MethodKind::Refu, Some(m)) => m.layer_uses_neural() || m.loss_uses_neural(),
            _ => false,
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sdf_mode {
            None => write!(f, "{}", self.method_label()),
            Some(m) => write!(f, "{}-{}", self.method_label(), m.as_str()),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PipelineError::Config(format!("unknown method tag {s:?}"));
        let (head, mode) = match s.rsplit_once('-') {
            Some((h, "acc")) => (h, Some(SdfMode::Acc)),
            Some((h, "approx")) => (h, Some(SdfMode::Approx)),
            Some((h, "hybrid")) => (h, Some(SdfMode::Hybrid)),
            _ => (s, None),
        };
        let mut spec = match head {
            "ground-truth" => Self::plain(MethodKind::GroundTruth),
            "backbone" => Self::plain(MethodKind::Backbone),
            "naive" => Self::plain(MethodKind::Naive),
            "optimize" => Self::plain(MethodKind::Optimize),
            "collision-loss" => Self::plain(MethodKind::CollisionLoss),
            "refu" => Self::refu(SdfMode::Acc, AlphaVariant::Main),
            "refu-fixed" => Self::refu_fixed(SdfMode::Acc),
            "refu-alt1" => Self::refu(SdfMode::Acc, AlphaVariant::SharedLatent),
            "refu-alt2" => Self::refu(SdfMode::Acc, AlphaVariant::SdfOnly),
            _ => return Err(bad()),
        };
        if Self::needs_mode(spec.kind) != mode.is_some() {
            return Err(bad());
        }
        spec.sdf_mode = mode;
        Ok(spec)
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = PipelineError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.to_string()
    }
}

/// Scale-network settings; the rest of the layer config follows the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefuSettings {
    pub latent_width: usize,
    pub vertex_latent: usize,
    pub g_hidden: usize,
    /// Factor applied to `f_i` before the scale network.
    pub sdf_input_scale: f64,
}

impl Default for RefuSettings {
    fn default() -> Self {
        Self {
            latent_width: 64,
            vertex_latent: 10,
            g_hidden: 10,
            sdf_input_scale: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfTrainSettings {
    /// Training frames whose bodies supply samples.
    pub bodies: usize,
    /// Further training bodies held out for the MAE probe.
    pub probe_bodies: usize,
    pub counts: SampleCounts,
    /// Disturbance standard deviation as a fraction of the nominal body
    /// radius.
    pub sigma_ratio: f64,
    pub train: SdfTrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    /// Backbone learning rate relative to `train.lr`; `None` freezes it.
    pub backbone_lr_scale: Option<f64>,
    /// Start ReFU runs from a fresh backbone instead of the pre-trained one.
    pub from_scratch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub backbone: BackboneConfig,
    pub refu: RefuSettings,
    pub sdf_net: SdfNetConfig,
    pub sdf_train: SdfTrainSettings,
    pub loss: LossWeights,
    pub backbone_train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub optimize: OptimizeConfig,
    pub methods: Vec<MethodSpec>,
    pub histogram_bins: usize,
    pub distance_buckets: usize,
    pub alpha_ratio_bins: usize,
    /// Report directory; the command line `--out` wins. Not part of the
    /// config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn small_sdf_net(cond_dim: usize) -> SdfNetConfig {
    SdfNetConfig {
        hidden_layers: 4,
        width: 64,
        skip: Some(2),
        bodies_per_batch: 4,
        points_per_body: 128,
        position_scale: 10.0,
        ..SdfNetConfig::paper(cond_dim)
    }
}

impl ExperimentConfig {
    /// The full desk-scale run: about 2,000 training and 300 test frames.
    pub fn desk() -> Self {
        use AlphaVariant::*;
        use SdfMode::*;
        Self {
            version: CONFIG_VERSION,
            seed: 2024,
            dataset: DatasetSpec::default(),
            backbone: BackboneConfig::default(),
            refu: RefuSettings::default(),
            sdf_net: small_sdf_net(5),
            sdf_train: SdfTrainSettings {
                bodies: 256,
                probe_bodies: 16,
                counts: SampleCounts {
                    body_surface: 512,
                    body_disturbed: 512,
                    garment_surface: 256,
                    garment_disturbed: 256,
                    bbox: 64,
                },
                sigma_ratio: 0.02,
                train: SdfTrainConfig {
                    epochs: 40,
                    adam: AdamConfig::with_lr(3e-3),
                    final_lr: 1e-4,
                    steps_per_epoch: 160,
                },
            },
            loss: LossWeights::default(),
            backbone_train: TrainConfig {
                epochs: 60,
                batch_size: 32,
                lr: 1e-3,
                final_lr: 5e-5,
            },
            finetune: FinetuneConfig {
                train: TrainConfig {
                    epochs: 10,
                    batch_size: 32,
                    lr: 1e-2,
                    final_lr: 1e-3,
                },
                backbone_lr_scale: Some(1e-3),
                from_scratch: false,
            },
            optimize: OptimizeConfig::default(),
            methods: vec![
                MethodSpec::plain(MethodKind::Backbone),
                MethodSpec::with_mode(MethodKind::Naive, Acc),
                MethodSpec::with_mode(MethodKind::Optimize, Acc),
                MethodSpec::with_mode(MethodKind::CollisionLoss, Acc),
                MethodSpec::refu(Acc, Main),
                MethodSpec::refu(Hybrid, Main),
                MethodSpec::refu(Approx, Main),
                MethodSpec::refu(Acc, SharedLatent),
                MethodSpec::refu(Acc, SdfOnly),
            ],
            histogram_bins: 50,
            distance_buckets: 4,
            alpha_ratio_bins: 10,
            output_dir: None,
        }
    }

    /// A seconds-long run over a handful of frames, for tests and CI.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.seed = 7;
        c.dataset.train_frames = 24;
        c.dataset.test_near = 6;
        c.dataset.test_far = 4;
        c.backbone.hidden = vec![32, 32];
        c.refu = RefuSettings {
            latent_width: 16,
            vertex_latent: 4,
            g_hidden: 10,
            ..c.refu
        };
        c.sdf_net = SdfNetConfig {
            hidden_layers: 2,
            width: 32,
            skip: None,
            bodies_per_batch: 4,
            points_per_body: 64,
            ..c.sdf_net
        };
        c.sdf_train.bodies = 8;
        c.sdf_train.probe_bodies = 2;
        c.sdf_train.counts = SampleCounts {
            body_surface: 64,
            body_disturbed: 64,
            garment_surface: 32,
            garment_disturbed: 32,
            bbox: 8,
        };
        c.sdf_train.train.epochs = 3;
        c.sdf_train.train.steps_per_epoch = 5;
        c.backbone_train.epochs = 4;
        c.backbone_train.batch_size = 8;
        c.finetune.train.epochs = 2;
        c.finetune.train.batch_size = 8;
        c.optimize.max_iters = 20;
        c.methods = vec![
            MethodSpec::plain(MethodKind::Backbone),
            MethodSpec::with_mode(MethodKind::Naive, SdfMode::Acc),
            MethodSpec::with_mode(MethodKind::Optimize, SdfMode::Acc),
            MethodSpec::with_mode(MethodKind::CollisionLoss, SdfMode::Acc),
            MethodSpec::refu(SdfMode::Acc, AlphaVariant::Main),
            MethodSpec::refu(SdfMode::Hybrid, AlphaVariant::Main),
        ];
        c.histogram_bins = 5;
        c.distance_buckets = 2;
        c.alpha_ratio_bins = 4;
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.loss.validate()?;
        self.backbone_train.validate()?;
        self.finetune.train.validate()?;
        self.sdf_net.validate()?;
        if self.sdf_net.cond_dim != super::body::BETA_DIM + super::body::THETA_DIM {
            return Err(PipelineError::Config("learned SDF must be conditioned on (beta, theta)".into()));
        }
        if !(self.refu.sdf_input_scale > 0.0 && self.refu.sdf_input_scale.is_finite()) {
            return Err(PipelineError::Config("scale-network input scale must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(PipelineError::Config("no methods requested".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(*m) {
                return Err(PipelineError::Config(format!("method {m} listed twice")));
            }
        }
        if self.histogram_bins == 0 || self.distance_buckets == 0 || self.alpha_ratio_bins == 0 {
            return Err(PipelineError::Config("bin counts must be positive".into()));
        }
        if self.dataset.train_frames == 0 || self.dataset.test_near + self.dataset.test_far == 0 {
            return Err(PipelineError::Config("dataset needs training and test frames".into()));
        }
        Ok(())
    }

    pub fn needs_neural_sdf(&self) -> bool {
        self.methods.iter().any(MethodSpec::uses_neural)
    }

    /// SHA-256 of the config JSON with the output directory cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        json_hash(&c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn refu_config(&self, spec: &MethodSpec, vertex_count: usize) -> RefuConfig {
        let mode = spec.sdf_mode.unwrap_or(SdfMode::Acc);
        RefuConfig {
            param_dim: PARAM_DIM,
            latent_width: self.refu.latent_width,
            vertex_latent: self.refu.vertex_latent,
            g_hidden: self.refu.g_hidden,
            vertex_count,
            scale_mode: spec.scale_mode,
            range_mode: mode.default_range(),
            sdf_mode: mode,
            variant: spec.variant,
            sdf_input_scale: self.refu.sdf_input_scale,
        }
    }
}

/// Result of the learned-SDF stage.
pub struct SdfStage {
    pub trainer: SdfTrainer,
    pub probe: SdfEval,
}

impl SdfStage {
    pub fn learned(&self) -> LearnedSdf {
        learned_sdf(&self.trainer)
    }
}

/// Network of a (possibly reloaded) SDF trainer, ready for queries.
pub fn learned_sdf(trainer: &SdfTrainer) -> LearnedSdf {
    LearnedSdf::new(trainer.net.clone(), trainer.net_config.position_scale)
}

fn sdf_samples(
    cfg: &ExperimentConfig,
    data: &Dataset,
    frames: &[&GarmentFrame],
    stream: &str,
) -> Result<SdfDataset, PipelineError> {
    let sigma = cfg.sdf_train.sigma_ratio * cfg.dataset.body.nominal_radius();
    let pairs = frames
        .iter()
        .map(|f| Ok((f.body.clone(), Some(data.garment_mesh(&f.garment)?))))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut rng = substream(data.seed, stream);
    let samples = sample_dataset(&pairs, &cfg.sdf_train.counts, sigma, &mut rng)?;
    Ok(SdfDataset {
        samples,
        conds: frames.iter().map(|f| f.params().body_cond()).collect(),
    })
}

/// Trains the learned body SDF on the first training bodies and probes it
/// on held-out ones.
pub fn train_sdf(cfg: &ExperimentConfig, data: &Dataset) -> Result<SdfStage, PipelineError> {
    let n = cfg.sdf_train.bodies.min(data.train.len());
    let probe_n = cfg.sdf_train.probe_bodies.min(data.train.len() - n);
    let train_frames: Vec<&GarmentFrame> = data.train[..n].iter().collect();
    let probe_frames: Vec<&GarmentFrame> = data.train[n..n + probe_n].iter().collect();
    let scale = cfg.sdf_net.position_scale;
    let train = sdf_samples(cfg, data, &train_frames, "sdf/samples/train")?.scaled(scale);
    let probe = sdf_samples(cfg, data, &probe_frames, "sdf/samples/probe")?.scaled(scale);
    let probe_refs: Vec<&SdfSample> = probe
        .samples
        .iter()
        .filter(|s| s.category != SampleCategory::Bbox)
        .collect();
    let mut trainer = SdfTrainer::new(cfg.sdf_net.clone(), cfg.sdf_train.train, data.seed ^ 0x5df)?;
    // The per-epoch probe uses its own conditioning, so it runs separately.
    trainer.train(&train, &[])?;
    let probe_eval = if probe_refs.is_empty() {
        SdfEval {
            mae: f64::NAN,
            mre: f64::NAN,
            mre_excluded: 0,
            eikonal_dev: f64::NAN,
        }
    } else {
        let e = evaluate_sdf(&trainer.net, &probe_refs, &probe.conds)?;
        SdfEval { mae: e.mae / scale, ..e }
    };
    log::info!(
        "learned SDF: probe MAE {:.3} mm, eikonal deviation {:.3}",
        probe_eval.mae * 1000.0,
        probe_eval.eikonal_dev
    );
    Ok(SdfStage {
        trainer,
        probe: probe_eval,
    })
}

/// Backbones and layers for every method of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub config_hash: String,
    pub backbone: Backbone,
    pub backbone_curve: Vec<EpochStats>,
    /// Keyed by method tag.
    pub collision: BTreeMap<String, (Backbone, Vec<EpochStats>)>,
    pub refu: BTreeMap<String, RefuModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionModelCheckpoint {
    pub backbone: BackboneCheckpoint,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModelsCheckpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub backbone: BackboneCheckpoint,
    pub backbone_curve: Vec<EpochStats>,
    pub collision: BTreeMap<String, CollisionModelCheckpoint>,
    pub refu: BTreeMap<String, RefuModelCheckpoint>,
}

const MODELS_FORMAT: &str = "refu-models";

impl TrainedModels {
    pub fn checkpoint(&self) -> TrainedModelsCheckpoint {
        TrainedModelsCheckpoint {
            format: MODELS_FORMAT.into(),
            version: 1,
            config_hash: self.config_hash.clone(),
            backbone: self.backbone.checkpoint(),
            backbone_curve: self.backbone_curve.clone(),
            collision: self
                .collision
                .iter()
                .map(|(k, (b, c))| {
                    (
                        k.clone(),
                        CollisionModelCheckpoint {
                            backbone: b.checkpoint(),
                            curve: c.clone(),
                        },
                    )
                })
                .collect(),
            refu: self.refu.iter().map(|(k, m)| (k.clone(), m.checkpoint())).collect(),
        }
    }

    pub fn from_checkpoint(ck: TrainedModelsCheckpoint) -> Result<Self, PipelineError> {
        if ck.format != MODELS_FORMAT {
            return Err(PipelineError::Config(format!("unknown model format {:?}", ck.format)));
        }
        let collision = ck
            .collision
            .into_iter()
            .map(|(k, c)| Ok((k, (Backbone::from_checkpoint(c.backbone)?, c.curve))))
            .collect::<Result<_, PipelineError>>()?;
        let refu = ck
            .refu
            .into_iter()
            .map(|(k, m)| Ok((k, RefuModel::from_checkpoint(m)?)))
            .collect::<Result<_, PipelineError>>()?;
        Ok(Self {
            config_hash: ck.config_hash,
            backbone: Backbone::from_checkpoint(ck.backbone)?,
            backbone_curve: ck.backbone_curve,
            collision,
            refu,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_vec(&self.checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let ck: TrainedModelsCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_checkpoint(ck)
    }
}

fn fresh_backbone(cfg: &ExperimentConfig, data: &Dataset, stream: &str) -> Result<Backbone, PipelineError> {
    let inputs: Vec<&[f64]> = data.train.iter().map(|f| f.features.as_slice()).collect();
    let targets: Vec<&[Vec3]> = data.train.iter().map(|f| f.garment.as_slice()).collect();
    Ok(Backbone::new(&cfg.backbone, &inputs, &targets, &mut substream(data.seed, stream))?)
}

/// Pre-trains the backbone, then fine-tunes a copy per collision-aware
/// method.
pub fn train_models(
    cfg: &ExperimentConfig,
    data: &Dataset,
    neural: Option<&LearnedSdf>,
) -> Result<TrainedModels, PipelineError> {
    cfg.validate()?;
    let ctx = TrainContext {
        frames: &data.train,
        neural,
        weights: cfg.loss,
        seed: data.seed,
    };
    let mut backbone = fresh_backbone(cfg, data, "backbone/init")?;
    let backbone_curve = train_backbone(&ctx, "backbone", &cfg.backbone_train, &mut backbone, None)?;
    let mut collision = BTreeMap::new();
    let mut refu = BTreeMap::new();
    for spec in &cfg.methods {
        let key = spec.to_string();
        match spec.kind {
            MethodKind::CollisionLoss => {
                let mut b = backbone.clone();
                let mut train = cfg.finetune.train;
                train.lr *= cfg.finetune.backbone_lr_scale.unwrap_or(1.0);
                train.final_lr *= cfg.finetune.backbone_lr_scale.unwrap_or(1.0);
                let curve = train_backbone(&ctx, &key, &train, &mut b, spec.sdf_mode)?;
                collision.insert(key, (b, curve));
            }
            MethodKind::Refu => {
                let rc = cfg.refu_config(spec, data.vertex_count());
                let mut layer = RefuLayer::new(rc, &mut substream(data.seed, &format!("{key}/init")))?;
                let (mut b, train, scale) = if cfg.finetune.from_scratch {
                    let mut t = cfg.finetune.train;
                    t.epochs = t.epochs.max(cfg.backbone_train.epochs);
                    (fresh_backbone(cfg, data, &format!("{key}/backbone"))?, t, Some(1.0))
                } else {
                    (backbone.clone(), cfg.finetune.train, cfg.finetune.backbone_lr_scale)
                };
                let curve = train_refu(&ctx, &key, &train, &mut b, &mut layer, scale)?;
                refu.insert(
                    key,
                    RefuModel {
                        backbone: b,
                        layer,
                        curve,
                    },
                );
            }
            _ => {}
        }
    }
    Ok(TrainedModels {
        config_hash: cfg.hash(),
        backbone,
        backbone_curve,
        collision,
        refu,
    })
}

/// Per-frame evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub id: usize,
    pub split: Split,
    pub distance: f64,
    pub metrics: FrameMetrics,
}

/// Mean scale over moved vertices whose learned-to-exact SDF ratio falls in
/// `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRatioBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub lo: f64,
    pub hi: f64,
    pub frames: usize,
    pub vfcp_pct: f64,
    pub cfmp_pct: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sdf_ms: f64,
    pub refu_ms: f64,
    pub backbone_ms: f64,
}

/// Per-frame query time of both SDF engines on backbone outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SdfStageTimings {
    pub frames: usize,
    pub exact_ms: f64,
    pub approx_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: MethodSpec,
    pub summary: MetricsSummary,
    pub frames: Vec<FrameResult>,
    pub alpha_ratio: Option<Vec<AlphaRatioBin>>,
    pub timings: Option<StageTimings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub methods: Vec<MethodReport>,
    pub sdf_timings: Option<SdfStageTimings>,
}

impl ExperimentReport {
    pub fn get(&self, tag: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method.to_string() == tag)
    }
}

/// Largest ratio tracked in the alpha-vs-ratio bins; larger ratios land in
/// the last bin.
const RATIO_MAX: f64 = 2.0;
/// Frames used for the serial timing pass.
const TIMING_FRAMES: usize = 32;

struct FrameEval {
    positions: Vec<Vec3>,
    /// `(learned/exact ratio, alpha)` for moved vertices.
    ratios: Vec<(f64, f64)>,
}

struct EvalContext<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a Dataset,
    models: &'a TrainedModels,
    neural: Option<&'a LearnedSdf>,
}

impl EvalContext<'_> {
    fn run(&self, spec: &MethodSpec, frame: &GarmentFrame, base: &[Vec3]) -> Result<FrameEval, PipelineError> {
        let plain = |positions: Vec<Vec3>| FrameEval {
            positions,
            ratios: Vec::new(),
        };
        let mode = spec.sdf_mode.unwrap_or(SdfMode::Acc);
        match spec.kind {
            MethodKind::GroundTruth => Ok(plain(frame.garment.clone())),
            MethodKind::Backbone => Ok(plain(base.to_vec())),
            MethodKind::Naive => {
                let engine = frame_engine(frame, self.neural, mode.layer_uses_neural())?;
                Ok(plain(naive_postprocess(base, engine.as_dyn()).positions))
            }
            MethodKind::Optimize => {
                let engine = frame_engine(frame, self.neural, mode.layer_uses_neural())?;
                let mesh = self.data.garment_mesh(base)?;
                let r = optimize_postprocess(&mesh, base, engine.as_dyn(), &self.cfg.optimize);
                if !r.converged {
                    log::warn!("optimization on frame {} stopped at violation {:.2e}", frame.record.id, r.max_violation);
                }
                Ok(plain(r.positions))
            }
            MethodKind::CollisionLoss => {
                let (b, _) = self.collision_model(spec)?;
                Ok(plain(b.predict(&frame.features)?))
            }
            MethodKind::Refu => {
                let model = self.refu_model(spec)?;
                let x = model.backbone.predict(&frame.features)?;
                let engine = frame_engine(frame, self.neural, mode.layer_uses_neural())?;
                let out = model
                    .layer
                    .forward(&model.backbone.normalize(&frame.features), &x, engine.as_dyn())?
                    .output;
                let ratios = match (self.neural, model.layer.config.scale_mode) {
                    (Some(net), ScaleMode::Predicted) => {
                        let exact = frame.body.values(&x);
                        let learned = frame_engine(frame, Some(net), true)?.as_dyn().values(&x);
                        (0..x.len())
                            .filter(|&i| out.moved[i] && exact[i] < 0.0)
                            .map(|i| (learned[i] / exact[i], out.alpha[i]))
                            .collect()
                    }
                    _ => Vec::new(),
                };
                Ok(FrameEval {
                    positions: out.positions,
                    ratios,
                })
            }
        }
    }

    fn collision_model(&self, spec: &MethodSpec) -> Result<&(Backbone, Vec<EpochStats>), PipelineError> {
        self.models
            .collision
            .get(&spec.to_string())
            .ok_or_else(|| PipelineError::MissingCheckpoint(format!("model for {spec}")))
    }

    fn refu_model(&self, spec: &MethodSpec) -> Result<&RefuModel, PipelineError> {
        self.models
            .refu
            .get(&spec.to_string())
            .ok_or_else(|| PipelineError::MissingCheckpoint(format!("model for {spec}")))
    }

    /// Serial timing of the backbone, SDF query and layer stages.
    fn time_method(&self, spec: &MethodSpec, frames: &[GarmentFrame]) -> Result<StageTimings, PipelineError> {
        let mut t = StageTimings::default();
        let mode = spec.sdf_mode.unwrap_or(SdfMode::Acc);
        for frame in frames {
            let backbone = match spec.kind {
                MethodKind::CollisionLoss => &self.collision_model(spec)?.0,
                MethodKind::Refu => &self.refu_model(spec)?.backbone,
                _ => &self.models.backbone,
            };
            let start = Instant::now();
            let x = backbone.predict(&frame.features)?;
            t.backbone_ms += start.elapsed().as_secs_f64() * 1e3;
            if matches!(spec.kind, MethodKind::Naive | MethodKind::Optimize | MethodKind::Refu) {
                let engine = frame_engine(frame, self.neural, mode.layer_uses_neural())?;
                let start = Instant::now();
                let values = engine.as_dyn().evaluate(&x);
                t.sdf_ms += start.elapsed().as_secs_f64() * 1e3;
                let f: Vec<f64> = values.iter().map(|s| s.value).collect();
                let g: Vec<Vec3> = values.iter().map(|s| s.gradient).collect();
                let start = Instant::now();
                match spec.kind {
                    MethodKind::Refu => {
                        let model = self.refu_model(spec)?;
                        model
                            .layer
                            .forward_with(&model.backbone.normalize(&frame.features), &x, &f, &g)?;
                    }
                    MethodKind::Naive => {
                        crate::refu::apply_refu_with(&x, &f, &g, &vec![1.0; x.len()]);
                    }
                    _ => {
                        let mesh = self.data.garment_mesh(&x)?;
                        optimize_postprocess(&mesh, &x, engine.as_dyn(), &self.cfg.optimize);
                    }
                }
                t.refu_ms += start.elapsed().as_secs_f64() * 1e3;
            }
        }
        let n = frames.len().max(1) as f64;
        Ok(StageTimings {
            sdf_ms: t.sdf_ms / n,
            refu_ms: t.refu_ms / n,
            backbone_ms: t.backbone_ms / n,
        })
    }
}

fn alpha_ratio_bins(pairs: &[(f64, f64)], bins: usize) -> Vec<AlphaRatioBin> {
    let width = RATIO_MAX / bins as f64;
    let mut sums = vec![(0usize, 0.0); bins];
    for &(ratio, alpha) in pairs {
        let idx = if ratio.is_finite() && ratio > 0.0 {
            ((ratio / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        sums[idx].0 += 1;
        sums[idx].1 += alpha;
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (count, sum))| AlphaRatioBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count,
            mean_alpha: (count > 0).then(|| sum / count as f64),
        })
        .collect()
}

fn sdf_timings(test: &[GarmentFrame], base: &[Vec<Vec3>], neural: Option<&LearnedSdf>) -> Result<SdfStageTimings, PipelineError> {
    let n = test.len().min(TIMING_FRAMES);
    let mut exact = 0.0;
    let mut approx = 0.0;
    for (frame, x) in test.iter().zip(base).take(n) {
        let start = Instant::now();
        frame.body.evaluate(x);
        exact += start.elapsed().as_secs_f64() * 1e3;
        if let Some(net) = neural {
            let engine = frame_engine(frame, Some(net), true)?;
            let start = Instant::now();
            engine.as_dyn().evaluate(x);
            approx += start.elapsed().as_secs_f64() * 1e3;
        }
    }
    let d = n.max(1) as f64;
    Ok(SdfStageTimings {
        frames: n,
        exact_ms: exact / d,
        approx_ms: neural.map(|_| approx / d),
    })
}

/// Evaluates every configured method on the test split. Frames run in
/// parallel; results are collected in frame order, so reports do not depend
/// on scheduling. Timings are measured only when `timings` is set.
pub fn evaluate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    models: &TrainedModels,
    neural: Option<&LearnedSdf>,
    timings: bool,
) -> Result<ExperimentReport, PipelineError> {
    cfg.validate()?;
    let ctx = EvalContext {
        cfg,
        data,
        models,
        neural,
    };
    let test = &data.test;
    let base: Vec<Vec<Vec3>> = test
        .par_iter()
        .map(|f| models.backbone.predict(&f.features))
        .collect::<Result<_, _>>()?;
    // Laplacian region: one-ring of the vertices the backbone leaves inside.
    let regions: Vec<Vec<usize>> = test
        .par_iter()
        .zip(&base)
        .map(|(f, x)| {
            let inside: Vec<usize> = f
                .body
                .values(x)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v < -CONTACT_TOL)
                .map(|(i, _)| i)
                .collect();
            one_ring_region(&data.template.mesh, &inside)
        })
        .collect();
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for spec in &cfg.methods {
        let evals = test
            .par_iter()
            .enumerate()
            .map(|(k, frame)| -> Result<(FrameResult, Vec<(f64, f64)>), PipelineError> {
                let out = ctx.run(spec, frame, &base[k])?;
                let mesh = data.garment_mesh(&out.positions)?;
                let report = collision_report(&mesh, &frame.body, CONTACT_TOL);
                let energy = penetration_energy(&frame.body.values(&out.positions));
                let lap = local_laplacian_error(&mesh, &out.positions, &frame.garment, &regions[k])?;
                let metrics = FrameMetrics::from_report(
                    mpve(&out.positions, &frame.garment)?,
                    out.positions.len(),
                    &report,
                    energy,
                    lap,
                );
                Ok((
                    FrameResult {
                        id: frame.record.id,
                        split: frame.record.split,
                        distance: frame.distance,
                        metrics,
                    },
                    out.ratios,
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut frames = Vec::with_capacity(evals.len());
        let mut ratios = Vec::new();
        for (f, r) in evals {
            frames.push(f);
            ratios.extend(r);
        }
        let summary = aggregate(&frames.iter().map(|f| f.metrics.clone()).collect::<Vec<_>>())?;
        let alpha_ratio = (spec.kind == MethodKind::Refu && spec.scale_mode == ScaleMode::Predicted && neural.is_some())
            .then(|| alpha_ratio_bins(&ratios, cfg.alpha_ratio_bins));
        let timing = if timings {
            Some(ctx.time_method(spec, &test[..test.len().min(TIMING_FRAMES)])?)
        } else {
            None
        };
        log::info!(
            "{spec}: MPVE {:.3} mm, VFCP {:.3}%, CFMP {:.1}%",
            summary.mpve_mm,
            summary.vfcp_pct,
            summary.cfmp_pct
        );
        methods.push(MethodReport {
            method: *spec,
            summary,
            frames,
            alpha_ratio,
            timings: timing,
        });
    }
    let sdf_timings = if timings {
        Some(sdf_timings(test, &base, neural)?)
    } else {
        None
    };
    Ok(ExperimentReport {
        config_hash: cfg.hash(),
        seed: data.seed,
        methods,
        sdf_timings,
    })
}

pub const CSV_HEADER: &str = "method,sdf_mode,MPVE_mm,VFCP_pct,CFMP_pct,avg_VF,avg_EE,pen_energy,lap_err_mm,t_sdf_ms,t_refu_ms,t_backbone_ms,config_hash,seed";

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.digits$}"))
}

pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in &report.methods {
        let s = &m.summary;
        let t = m.timings;
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.2},{:.4},{:.4},{:.6e},{},{},{},{},{},{}\n",
            m.method.method_label(),
            m.method.sdf_label(),
            s.mpve_mm,
            s.vfcp_pct,
            s.cfmp_pct,
            s.avg_vf,
            s.avg_ee,
            s.pen_energy,
            opt(s.lap_err_mm, 4),
            opt(t.map(|t| t.sdf_ms), 3),
            opt(t.map(|t| t.refu_ms), 3),
            opt(t.map(|t| t.backbone_ms), 3),
            report.config_hash,
            report.seed
        ));
    }
    out
}

/// One parsed row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub sdf_mode: String,
    pub mpve_mm: f64,
    pub vfcp_pct: f64,
    pub cfmp_pct: f64,
    pub avg_vf: f64,
    pub avg_ee: f64,
    pub pen_energy: f64,
    pub lap_err_mm: Option<f64>,
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<CsvRow>, PipelineError> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(PipelineError::Config("metrics table has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != CSV_HEADER.split(',').count() {
                return Err(PipelineError::Config(format!("malformed metrics row {line:?}")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| PipelineError::Config(format!("bad number {s:?} in {line:?}")))
            };
            Ok(CsvRow {
                method: c[0].into(),
                sdf_mode: c[1].into(),
                mpve_mm: num(c[2])?,
                vfcp_pct: num(c[3])?,
                cfmp_pct: num(c[4])?,
                avg_vf: num(c[5])?,
                avg_ee: num(c[6])?,
                pen_energy: num(c[7])?,
                lap_err_mm: if c[8].is_empty() { None } else { Some(num(c[8])?) },
            })
        })
        .collect()
}

/// Relative change of each row against the backbone row, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub method: String,
    pub sdf_mode: String,
    pub mpve_pct: Option<f64>,
    pub vfcp_pct: Option<f64>,
    pub cfmp_pct: Option<f64>,
}

pub fn trend_rows(rows: &[CsvRow]) -> Result<Vec<TrendRow>, PipelineError> {
    let base = rows
        .iter()
        .find(|r| r.method == "backbone")
        .ok_or_else(|| PipelineError::Config("metrics table has no backbone row".into()))?;
    let rel = |v: f64, b: f64| (b != 0.0).then(|| 100.0 * (v - b) / b);
    Ok(rows
        .iter()
        .filter(|r| r.method != "backbone")
        .map(|r| TrendRow {
            method: r.method.clone(),
            sdf_mode: r.sdf_mode.clone(),
            mpve_pct: rel(r.mpve_mm, base.mpve_mm),
            vfcp_pct: rel(r.vfcp_pct, base.vfcp_pct),
            cfmp_pct: rel(r.cfmp_pct, base.cfmp_pct),
        })
        .collect())
}

pub fn trend_csv(rows: &[TrendRow]) -> String {
    let mut out = String::from("method,sdf_mode,MPVE_trend_pct,VFCP_trend_pct,CFMP_trend_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            r.sdf_mode,
            opt(r.mpve_pct, 2),
            opt(r.vfcp_pct, 2),
            opt(r.cfmp_pct, 2)
        ));
    }
    out
}

fn quantile_buckets(report: &ExperimentReport, buckets: usize) -> serde_json::Value {
    let Some(first) = report.methods.first() else {
        return serde_json::json!([]);
    };
    let mut order: Vec<usize> = (0..first.frames.len()).collect();
    order.sort_by(|&a, &b| first.frames[a].distance.total_cmp(&first.frames[b].distance).then(a.cmp(&b)));
    let n = order.len();
    let mut out = BTreeMap::new();
    for m in &report.methods {
        let stats: Vec<BucketStats> = (0..buckets)
            .filter_map(|b| {
                let idx = &order[b * n / buckets..(b + 1) * n / buckets];
                if idx.is_empty() {
                    return None;
                }
                let frames: Vec<&FrameResult> = idx.iter().map(|&i| &m.frames[i]).collect();
                let verts: usize = frames.iter().map(|f| f.metrics.vertex_count).sum();
                let vf: usize = frames.iter().map(|f| f.metrics.vf_vertices).sum();
                Some(BucketStats {
                    lo: frames.first().map_or(0.0, |f| f.distance),
                    hi: frames.last().map_or(0.0, |f| f.distance),
                    frames: frames.len(),
                    vfcp_pct: 100.0 * vf as f64 / verts.max(1) as f64,
                    cfmp_pct: 100.0 * frames.iter().filter(|f| f.metrics.collision_free).count() as f64
                        / frames.len() as f64,
                })
            })
            .collect();
        out.insert(m.method.to_string(), stats);
    }
    serde_json::json!(out)
}

fn frames_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "method,frame,split,distance,MPVE_mm,vf_vertices,vf_triangles,ee_triangles,collision_free,pen_energy,lap_err_mm\n",
    );
    for m in &report.methods {
        for f in &m.frames {
            let x = &f.metrics;
            out.push_str(&format!(
                "{},{},{},{:.6},{:.4},{},{},{},{},{:.6e},{}\n",
                m.method,
                f.id,
                serde_json::to_value(f.split).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                f.distance,
                x.mpve_mm,
                x.vf_vertices,
                x.vf_triangles,
                x.ee_triangles,
                x.collision_free,
                x.pen_energy,
                opt(x.lap_err_mm, 4)
            ));
        }
    }
    out
}

/// Histograms of per-frame penetration energy, all over a common range.
pub fn energy_histograms(report: &ExperimentReport, bins: usize) -> BTreeMap<String, Histogram> {
    let upper = report
        .methods
        .iter()
        .flat_map(|m| m.frames.iter().map(|f| f.metrics.pen_energy))
        .fold(0.0, f64::max);
    report
        .methods
        .iter()
        .map(|m| {
            let values: Vec<f64> = m.frames.iter().map(|f| f.metrics.pen_energy).collect();
            (m.method.to_string(), histogram(&values, bins, Some(upper)))
        })
        .collect()
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

/// Writes the report files into `dir`. `timings.json` is written only when
/// the report carries timings.
pub fn write_report(report: &ExperimentReport, cfg: &ExperimentConfig, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(report))?;
    std::fs::write(dir.join("frames.csv"), frames_csv(report))?;
    let summaries: Vec<serde_json::Value> = report
        .methods
        .iter()
        .map(|m| {
            serde_json::json!({
                "method": m.method.method_label(),
                "sdf_mode": m.method.sdf_label(),
                "tag": m.method.to_string(),
                "summary": m.summary,
            })
        })
        .collect();
    write_json(
        dir,
        "metrics.json",
        &serde_json::json!({
            "config_hash": report.config_hash,
            "seed": report.seed,
            "methods": summaries,
        }),
    )?;
    write_json(dir, "histogram.json", &energy_histograms(report, cfg.histogram_bins))?;
    let ratio: BTreeMap<String, &Vec<AlphaRatioBin>> = report
        .methods
        .iter()
        .filter_map(|m| m.alpha_ratio.as_ref().map(|r| (m.method.to_string(), r)))
        .collect();
    write_json(dir, "alpha_ratio.json", &ratio)?;
    write_json(dir, "distance_buckets.json", &quantile_buckets(report, cfg.distance_buckets))?;
    if report.sdf_timings.is_some() || report.methods.iter().any(|m| m.timings.is_some()) {
        let stages: BTreeMap<String, Option<StageTimings>> =
            report.methods.iter().map(|m| (m.method.to_string(), m.timings)).collect();
        write_json(
            dir,
            "timings.json",
            &serde_json::json!({ "sdf": report.sdf_timings, "methods": stages }),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for tag in [
            "ground-truth",
            "backbone",
            "naive-acc",
            "optimize-hybrid",
            "collision-loss-approx",
            "refu-acc",
            "refu-hybrid",
            "refu-fixed-acc",
            "refu-alt1-acc",
            "refu-alt2-approx",
        ] {
            let m: MethodSpec = tag.parse().unwrap();
            assert_eq!(m.to_string(), tag);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<MethodSpec>(&json).unwrap(), m);
        }
        assert!("refu".parse::<MethodSpec>().is_err());
        assert!("backbone-acc".parse::<MethodSpec>().is_err());
        assert!("teleport-acc".parse::<MethodSpec>().is_err());
    }

    #[test]
    fn presets_validate_and_hash_ignores_output_dir() {
        ExperimentConfig::desk().validate().unwrap();
        let mut c = ExperimentConfig::smoke();
        c.validate().unwrap();
        let h = c.hash();
        c.output_dir = Some("/tmp/x".into());
        assert_eq!(c.hash(), h);
        c.loss.collision = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn alpha_ratio_bins_average_per_bin() {
        let bins = alpha_ratio_bins(&[(0.1, 1.0), (0.2, 3.0), (1.9, 2.0), (5.0, 4.0)], 4);
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[0].mean_alpha, Some(2.0));
        assert_eq!(bins[1].mean_alpha, None);
        assert_eq!(bins[3].count, 2);
        assert_eq!(bins[3].mean_alpha, Some(3.0));
    }

    #[test]
    fn csv_round_trip_and_trend() {
        let summary = |mpve: f64, vfcp: f64, cfmp: f64| MetricsSummary {
            frames: 2,
            mpve_mm: mpve,
            vfcp_pct: vfcp,
            cfmp_pct: cfmp,
            avg_vf: 1.0,
            avg_ee: 0.5,
            pen_energy: 1e-6,
            lap_err_mm: None,
        };
        let method = |m: MethodSpec, s: MetricsSummary| MethodReport {
            method: m,
            summary: s,
            frames: Vec::new(),
            alpha_ratio: None,
            timings: None,
        };
        let report = ExperimentReport {
            config_hash: "abc".into(),
            seed: 3,
            methods: vec![
                method(MethodSpec::plain(MethodKind::Backbone), summary(4.0, 2.0, 50.0)),
                method(MethodSpec::refu(SdfMode::Hybrid, AlphaVariant::Main), summary(3.0, 0.5, 75.0)),
            ],
            sdf_timings: None,
        };
        let csv = metrics_csv(&report);
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,,abc,3"));
        let rows = read_metrics_csv(&csv).unwrap();
        assert_eq!(rows[1].method, "refu");
        assert_eq!(rows[1].sdf_mode, "hybrid");
        let trend = trend_rows(&rows).unwrap();
        assert_eq!(trend.len(), 1);
        assert!((trend[0].mpve_pct.unwrap() + 25.0).abs() < 1e-9);
        assert!((trend[0].vfcp_pct.unwrap() + 75.0).abs() < 1e-9);
        assert!((trend[0].cfmp_pct.unwrap() - 50.0).abs() < 1e-9);
    }
}
