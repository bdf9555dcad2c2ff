//! The three training modes: reconstruction only, reconstruction plus the
//! collision hinge, and fine-tuning through the ReFU layer.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneCheckpoint};
use super::data::GarmentFrame;
use super::{substream, PipelineError};
use crate::collision::CONTACT_TOL;
use crate::geometry::Vec3;
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::refu::{AlphaGrads, AlphaOptimizer, RefuConfig, RefuLayer, SdfMode};
use crate::sdf::{ExactSdf, NeuralSdf, SdfEngine};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate, decayed to `final_lr` on a cosine schedule.
    pub lr: f64,
    pub final_lr: f64,
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        let t = (epoch as f64 / span).min(1.0);
        self.final_lr + 0.5 * (self.lr - self.final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.final_lr >= 0.0) {
            return Err(PipelineError::Config(format!("bad training schedule {self:?}")));
        }
        Ok(())
    }
}

/// `L = reconstruction * L_r + collision * L_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub collision: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reconstruction: 1.5,
            collision: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.reconstruction >= 0.0 && self.collision >= 0.0) {
            return Err(PipelineError::Config(format!("loss weights must be non-negative, got {self:?}")));
        }
        Ok(())
    }
}

/// Per-epoch means over frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_r: f64,
    pub l_c: f64,
    /// Vertices inside the body after the layer (or the backbone when there
    /// is no layer), as seen by the loss engine, summed over the epoch.
    pub post_vf: usize,
}

/// SDF engine bound to one frame's body.
pub(crate) enum FrameEngine<'a> {
    Exact(&'a ExactSdf),
    Neural(NeuralSdf),
}

impl FrameEngine<'_> {
    pub(crate) fn as_dyn(&self) -> &dyn SdfEngine {
        match self {
            FrameEngine::Exact(e) => *e,
            FrameEngine::Neural(n) => n,
        }
    }
}

/// A trained body SDF network with the coordinate scale it was fit in.
#[derive(Debug, Clone)]
pub struct LearnedSdf {
    pub net: Arc<Mlp>,
    pub position_scale: f64,
}

impl LearnedSdf {
    pub fn new(net: Mlp, position_scale: f64) -> Self {
        Self {
            net: Arc::new(net),
            position_scale,
        }
    }

    pub fn engine(&self, cond: Vec<f64>) -> Result<NeuralSdf, PipelineError> {
        Ok(NeuralSdf::with_scale(Arc::clone(&self.net), cond, self.position_scale)?)
    }
}

pub(crate) fn frame_engine<'a>(
    frame: &'a GarmentFrame,
    neural: Option<&LearnedSdf>,
    use_neural: bool,
) -> Result<FrameEngine<'a>, PipelineError> {
    if !use_neural {
        return Ok(FrameEngine::Exact(&frame.body));
    }
    let sdf = neural.ok_or_else(|| PipelineError::MissingCheckpoint("learned body SDF".into()))?;
    Ok(FrameEngine::Neural(sdf.engine(frame.params().body_cond())?))
}

/// What a training run shares across stages.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub frames: &'a [GarmentFrame],
    pub neural: Option<&'a LearnedSdf>,
    pub weights: LossWeights,
    pub seed: u64,
}

struct FrameOut {
    positions_bar: Vec<Vec3>,
    alpha: Option<AlphaGrads>,
    l_r: f64,
    l_c: f64,
    post_vf: usize,
}

/// Loss and cotangents for one frame. `collision` selects the loss engine
/// (`Some(true)` for the learned SDF) or disables the hinge term.
fn frame_step(
    ctx: &TrainContext,
    frame: &GarmentFrame,
    x: &[Vec3],
    h_in: &[f64],
    layer: Option<&RefuLayer>,
    collision: Option<bool>,
) -> Result<FrameOut, PipelineError> {
    let w = ctx.weights;
    let layer_state = match layer {
        Some(l) => {
            let engine = frame_engine(frame, ctx.neural, l.config.sdf_mode.layer_uses_neural())?;
            let fwd = l.forward(h_in, x, engine.as_dyn())?;
            Some((l, engine, fwd))
        }
        None => None,
    };
    let y: &[Vec3] = match &layer_state {
        Some((_, _, fwd)) => &fwd.output.positions,
        None => x,
    };
    let mut l_r = 0.0;
    let mut bar: Vec<Vec3> = y
        .iter()
        .zip(&frame.garment)
        .map(|(p, t)| {
            let d = p - t;
            l_r += d.norm_squared();
            d * (2.0 * w.reconstruction)
        })
        .collect();
    let mut l_c = 0.0;
    let mut post_vf = 0;
    if let Some(loss_neural) = collision {
        let engine = frame_engine(frame, ctx.neural, loss_neural)?;
        for (i, s) in engine.as_dyn().evaluate(y).into_iter().enumerate() {
            if s.value < 0.0 {
                l_c -= s.value;
                bar[i] -= s.gradient * w.collision;
            }
            if s.value < -CONTACT_TOL {
                post_vf += 1;
            }
        }
    }
    let (positions_bar, alpha) = match &layer_state {
        Some((l, engine, fwd)) => l.backward(fwd, x, engine.as_dyn(), &bar)?,
        None => (bar, None),
    };
    Ok(FrameOut {
        positions_bar,
        alpha,
        l_r,
        l_c,
        post_vf,
    })
}

/// Shared loop. `backbone_lr_scale = None` freezes the backbone.
fn run(
    ctx: &TrainContext,
    stage: &str,
    cfg: &TrainConfig,
    backbone: &mut Backbone,
    backbone_lr_scale: Option<f64>,
    mut layer: Option<&mut RefuLayer>,
    collision: Option<bool>,
) -> Result<Vec<EpochStats>, PipelineError> {
    cfg.validate()?;
    ctx.weights.validate()?;
    if ctx.frames.is_empty() {
        return Err(PipelineError::Config(format!("{stage}: no training frames")));
    }
    let mut bb_opt = Adam::for_mlp(AdamConfig::with_lr(cfg.lr), &backbone.net);
    let mut alpha_opt = layer
        .as_ref()
        .and_then(|l| l.nets.as_ref())
        .map(|n| AlphaOptimizer::new(AdamConfig::with_lr(cfg.lr), n));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..ctx.frames.len()).collect();
        order.shuffle(&mut substream(ctx.seed, &format!("{stage}/epoch/{epoch}")));
        let (mut loss_sum, mut lr_sum, mut lc_sum, mut post_vf) = (0.0, 0.0, 0.0, 0);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let raws: Vec<&[f64]> = batch.iter().map(|&i| ctx.frames[i].features.as_slice()).collect();
            let xin = backbone.input_matrix(&raws);
            let (preds, cache) = backbone.forward_cached(xin.view())?;
            let layer_ref = layer.as_deref();
            let bb = &*backbone;
            let outs = batch
                .par_iter()
                .zip(preds.par_iter())
                .map(|(&i, x)| {
                    let frame = &ctx.frames[i];
                    frame_step(ctx, frame, x, &bb.normalize(&frame.features), layer_ref, collision)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut step_loss = 0.0;
            let mut alpha_grads: Option<AlphaGrads> = None;
            let mut bars = Vec::with_capacity(outs.len());
            for out in outs {
                step_loss += ctx.weights.reconstruction * out.l_r + ctx.weights.collision * out.l_c;
                lr_sum += out.l_r;
                lc_sum += out.l_c;
                post_vf += out.post_vf;
                if let Some(g) = &out.alpha {
                    match &mut alpha_grads {
                        Some(acc) => acc.add_assign(g),
                        None => alpha_grads = Some(g.clone()),
                    }
                }
                bars.push(out.positions_bar.into_iter().map(|v| v * inv).collect::<Vec<_>>());
            }
            loss_sum += step_loss;
            let diverged = || PipelineError::Diverged {
                stage: stage.to_string(),
                epoch,
                step,
            };
            if !step_loss.is_finite() {
                return Err(diverged());
            }
            if let Some(scale) = backbone_lr_scale {
                let grads = backbone.backward(&cache, &bars)?;
                if !grads.is_finite() {
                    return Err(diverged());
                }
                bb_opt.step_mlp_with_lr(&mut backbone.net, &grads, lr * scale)?;
            }
            if let (Some(opt), Some(l), Some(mut g)) = (&mut alpha_opt, layer.as_deref_mut(), alpha_grads) {
                g.scale(inv);
                if !g.is_finite() {
                    return Err(diverged());
                }
                if let Some(nets) = &mut l.nets {
                    opt.step(nets, &g, lr)?;
                }
            }
        }
        let n = ctx.frames.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            loss: loss_sum / n,
            l_r: lr_sum / n,
            l_c: lc_sum / n,
            post_vf,
        };
        log::info!(
            "{stage} epoch {epoch}: loss {:.4e} l_r {:.4e} l_c {:.4e} post_vf {}",
            stats.loss,
            stats.l_r,
            stats.l_c,
            stats.post_vf
        );
        curve.push(stats);
    }
    Ok(curve)
}

/// Modes (a) and (b): trains `backbone` in place on reconstruction, plus the
/// collision hinge under `collision`'s loss engine when given.
pub fn train_backbone(
    ctx: &TrainContext,
    stage: &str,
    cfg: &TrainConfig,
    backbone: &mut Backbone,
    collision: Option<SdfMode>,
) -> Result<Vec<EpochStats>, PipelineError> {
    run(ctx, stage, cfg, backbone, Some(1.0), None, collision.map(SdfMode::loss_uses_neural))
}

/// Mode (c): trains the layer's scale networks (and the backbone unless
/// `backbone_lr_scale` is `None`) through the layer.
pub fn train_refu(
    ctx: &TrainContext,
    stage: &str,
    cfg: &TrainConfig,
    backbone: &mut Backbone,
    layer: &mut RefuLayer,
    backbone_lr_scale: Option<f64>,
) -> Result<Vec<EpochStats>, PipelineError> {
    let loss_neural = layer.config.sdf_mode.loss_uses_neural();
    run(ctx, stage, cfg, backbone, backbone_lr_scale, Some(layer), Some(loss_neural))
}

/// A backbone with its attached layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RefuModel {
    pub backbone: Backbone,
    pub layer: RefuLayer,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefuModelCheckpoint {
    pub backbone: BackboneCheckpoint,
    pub config: RefuConfig,
    /// Flattened scale-network parameters; absent for the fixed scale.
    pub alpha_params: Option<Vec<f64>>,
    pub curve: Vec<EpochStats>,
}

impl RefuModel {
    pub fn checkpoint(&self) -> RefuModelCheckpoint {
        RefuModelCheckpoint {
            backbone: self.backbone.checkpoint(),
            config: self.layer.config.clone(),
            alpha_params: self.layer.nets.as_ref().map(|n| n.flat_parameters()),
            curve: self.curve.clone(),
        }
    }

    pub fn from_checkpoint(ck: RefuModelCheckpoint) -> Result<Self, PipelineError> {
        let mut layer = RefuLayer::new(ck.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        match (&mut layer.nets, &ck.alpha_params) {
            (Some(nets), Some(p)) => nets.set_flat_parameters(p)?,
            (None, None) => {}
            _ => return Err(PipelineError::Config("scale networks do not match the layer config".into())),
        }
        Ok(Self {
            backbone: Backbone::from_checkpoint(ck.backbone)?,
            layer,
            curve: ck.curve,
        })
    }

    /// Backbone prediction followed by the layer.
    pub fn predict(&self, features: &[f64], engine: &dyn SdfEngine) -> Result<Vec<Vec3>, PipelineError> {
        let x = self.backbone.predict(features)?;
        let fwd = self.layer.forward(&self.backbone.normalize(features), &x, engine)?;
        Ok(fwd.output.positions)
    }
}
