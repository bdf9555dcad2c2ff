//! The repulsive-force unit: penetrating vertices are pushed along the
//! normalized SDF gradient by `alpha * |f|`, with `alpha` either fixed or
//! predicted per vertex from the global parameters and the local SDF value.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::nn::{Activation, Adam, AdamConfig, ForwardCache, LayerSpec, Mlp, MlpGrads, NnError};
use crate::sdf::SdfEngine;

/// Gradients shorter than this leave the vertex unmoved.
pub const DEGENERATE_GRADIENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    Fixed,
    Predicted,
}

/// `Acc`: alpha in `[1, inf)`; `Approx`: alpha in `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    Acc,
    Approx,
}

/// Which SDF drives the layer and the collision loss. `Hybrid` uses the
/// learned SDF inside the layer and the exact one for the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdfMode {
    Approx,
    Acc,
    Hybrid,
}

impl SdfMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SdfMode::Approx => "approx",
            SdfMode::Acc => "acc",
            SdfMode::Hybrid => "hybrid",
        }
    }

    /// Whether the layer itself queries the learned SDF.
    pub fn layer_uses_neural(self) -> bool {
        !matches!(self, SdfMode::Acc)
    }

    /// Whether the training-time collision loss queries the learned SDF.
    pub fn loss_uses_neural(self) -> bool {
        matches!(self, SdfMode::Approx)
    }

    /// Range implied by the SDF setting: exact distances allow `alpha >= 1`.
    pub fn default_range(self) -> RangeMode {
        match self {
            SdfMode::Acc => RangeMode::Acc,
            SdfMode::Approx | SdfMode::Hybrid => RangeMode::Approx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaVariant {
    /// `alpha_i = g(k(z)_i, f_i)` with a per-vertex latent.
    Main,
    /// `alpha_i = g(k'(z), f_i)` with one latent shared by all vertices.
    SharedLatent,
    /// `alpha_i = g(f_i)`.
    SdfOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefuConfig {
    /// Width of the concatenated (shape, pose, style) vector.
    pub param_dim: usize,
    /// Global latent width M.
    pub latent_width: usize,
    /// Per-vertex latent width D.
    pub vertex_latent: usize,
    /// Hidden width of g.
    pub g_hidden: usize,
    pub vertex_count: usize,
    pub scale_mode: ScaleMode,
    pub range_mode: RangeMode,
    pub sdf_mode: SdfMode,
    pub variant: AlphaVariant,
    /// Multiplies `f_i` before it enters g, so the scale network sees
    /// distances in convenient units (1000: millimeters).
    #[serde(default = "unit_input_scale")]
    pub sdf_input_scale: f64,
}

fn unit_input_scale() -> f64 {
    1.0
}

impl RefuConfig {
    pub fn desk(param_dim: usize, vertex_count: usize, sdf_mode: SdfMode) -> Self {
        Self {
            param_dim,
            latent_width: 64,
            vertex_latent: 10,
            g_hidden: 10,
            vertex_count,
            scale_mode: ScaleMode::Predicted,
            range_mode: sdf_mode.default_range(),
            sdf_mode,
            variant: AlphaVariant::Main,
            sdf_input_scale: 1000.0,
        }
    }

    /// Width of the latent fed to g (per vertex for `Main`).
    pub fn g_latent_width(&self) -> usize {
        match self.variant {
            AlphaVariant::Main => self.vertex_latent,
            AlphaVariant::SharedLatent => self.shared_latent_width(),
            AlphaVariant::SdfOnly => 0,
        }
    }

    /// D' for the shared-latent variant: the width that brings its total
    /// parameter count closest to the main variant's.
    pub fn shared_latent_width(&self) -> usize {
        let target = self.parameter_count_for(AlphaVariant::Main, self.vertex_latent) as f64;
        let base = self.parameter_count_for(AlphaVariant::SharedLatent, 0) as f64;
        // Count is affine in D': base + D' * (M + 1 + g_hidden).
        let slope = (self.latent_width + 1 + self.g_hidden) as f64;
        (((target - base) / slope).round() as usize).max(1)
    }

    fn parameter_count_for(&self, variant: AlphaVariant, latent: usize) -> usize {
        let m = self.latent_width;
        let gh = self.g_hidden;
        let h = self.param_dim * m + m + 2 * (m * m + m);
        let g = |inp: usize| inp * gh + gh + gh * gh + gh + gh + 1;
        match variant {
            AlphaVariant::Main => h + m * self.vertex_count * latent + self.vertex_count * latent + g(latent + 1),
            AlphaVariant::SharedLatent => h + m * latent + latent + g(latent + 1),
            AlphaVariant::SdfOnly => g(1),
        }
    }

    pub fn parameter_count(&self) -> usize {
        if self.scale_mode == ScaleMode::Fixed {
            return 0;
        }
        self.parameter_count_for(self.variant, self.g_latent_width())
    }
}

/// Maps the pre-activation `u` into the configured range.
#[inline]
pub fn range_activation(range: RangeMode, u: f64) -> f64 {
    let sp = crate::nn::softplus(u, 1.0);
    match range {
        RangeMode::Acc => 1.0 + sp,
        RangeMode::Approx => sp,
    }
}

#[inline]
fn range_derivative(u: f64) -> f64 {
    crate::nn::sigmoid(u)
}

/// The networks that predict alpha (h, k and g, depending on the variant).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaNetworks {
    pub variant: AlphaVariant,
    pub range: RangeMode,
    pub h: Option<Mlp>,
    pub k: Option<Mlp>,
    pub g: Mlp,
    vertex_count: usize,
    g_latent: usize,
    f_scale: f64,
}

#[derive(Debug, Clone)]
pub struct AlphaCache {
    h: Option<ForwardCache>,
    k: Option<ForwardCache>,
    g: ForwardCache,
    u: Vec<f64>,
    /// Vertices g was evaluated on, in cache row order.
    rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrads {
    pub h: Option<MlpGrads>,
    pub k: Option<MlpGrads>,
    pub g: MlpGrads,
}

impl AlphaGrads {
    pub fn zeros_like(nets: &AlphaNetworks) -> Self {
        Self {
            h: nets.h.as_ref().map(MlpGrads::zeros_like),
            k: nets.k.as_ref().map(MlpGrads::zeros_like),
            g: MlpGrads::zeros_like(&nets.g),
        }
    }

    pub fn add_assign(&mut self, other: &AlphaGrads) {
        if let (Some(a), Some(b)) = (&mut self.h, &other.h) {
            a.add_assign(b);
        }
        if let (Some(a), Some(b)) = (&mut self.k, &other.k) {
            a.add_assign(b);
        }
        self.g.add_assign(&other.g);
    }

    pub fn scale(&mut self, s: f64) {
        if let Some(a) = &mut self.h {
            a.scale(s);
        }
        if let Some(a) = &mut self.k {
            a.scale(s);
        }
        self.g.scale(s);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in [&self.h, &self.k].into_iter().flatten() {
            out.extend(g.flatten());
        }
        out.extend(self.g.flatten());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.h.as_ref().is_none_or(MlpGrads::is_finite)
            && self.k.as_ref().is_none_or(MlpGrads::is_finite)
            && self.g.is_finite()
    }
}

/// Output of [`AlphaNetworks::backward`].
#[derive(Debug, Clone)]
pub struct AlphaBackward {
    pub grads: AlphaGrads,
    /// `d alpha_i / d f_i` scaled by the incoming cotangent.
    pub f_bar: Vec<f64>,
    /// Cotangent of the global parameter vector.
    pub params_bar: Vec<f64>,
}

impl AlphaNetworks {
    pub fn new<R: Rng + ?Sized>(cfg: &RefuConfig, rng: &mut R) -> Result<Self, NnError> {
        let m = cfg.latent_width;
        let relu = Activation::Relu;
        let id = Activation::Identity;
        let g_latent = cfg.g_latent_width();
        let (h, k) = match cfg.variant {
            AlphaVariant::SdfOnly => (None, None),
            variant => {
                let h = Mlp::new(
                    cfg.param_dim,
                    &[LayerSpec::new(m, relu), LayerSpec::new(m, relu), LayerSpec::new(m, id)],
                    None,
                    rng,
                )?;
                let k_out = if variant == AlphaVariant::Main {
                    cfg.vertex_count * cfg.vertex_latent
                } else {
                    g_latent
                };
                let k = Mlp::new(m, &[LayerSpec::new(k_out, id)], None, rng)?;
                (Some(h), Some(k))
            }
        };
        let mut g = Mlp::new(
            g_latent + 1,
            &[
                LayerSpec::new(cfg.g_hidden, relu),
                LayerSpec::new(cfg.g_hidden, relu),
                LayerSpec::new(1, id),
            ],
            None,
            rng,
        )?;
        // Start close to the fixed-scale layer: alpha ~ 1 (approx) or just above 1 (acc).
        let start = match cfg.range_mode {
            RangeMode::Approx => 1.0f64.exp_m1().ln(),
            RangeMode::Acc => 0.05f64.exp_m1().ln(),
        };
        let last = g.layers_mut().last_mut().expect("g has layers");
        last.weight.mapv_inplace(|w| w * 0.1);
        last.bias.fill(start);
        Ok(Self {
            variant: cfg.variant,
            range: cfg.range_mode,
            h,
            k,
            g,
            vertex_count: cfg.vertex_count,
            g_latent,
            f_scale: cfg.sdf_input_scale,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn parameter_count(&self) -> usize {
        self.h.as_ref().map_or(0, Mlp::parameter_count)
            + self.k.as_ref().map_or(0, Mlp::parameter_count)
            + self.g.parameter_count()
    }

    /// `z = h(params)`; `None` for the SDF-only variant.
    pub fn global_latent(&self, params: &[f64]) -> Result<Option<Vec<f64>>, NnError> {
        match &self.h {
            Some(h) => Ok(Some(h.forward_one(params)?)),
            None => Ok(None),
        }
    }

    fn g_input(&self, latent: Option<&Array2<f64>>, f: &[f64], rows: &[usize]) -> Array2<f64> {
        let d = self.g_latent;
        let mut x = Array2::zeros((rows.len(), d + 1));
        if let Some(lat) = latent {
            let lat = lat.row(0);
            for (r, &i) in rows.iter().enumerate() {
                let src = match self.variant {
                    AlphaVariant::Main => lat.slice(ndarray::s![i * d..(i + 1) * d]),
                    _ => lat.slice(ndarray::s![..d]),
                };
                x.slice_mut(ndarray::s![r, ..d]).assign(&src);
            }
        }
        for (r, &i) in rows.iter().enumerate() {
            x[[r, d]] = f[i] * self.f_scale;
        }
        x
    }

    pub fn forward(&self, params: &[f64], f: &[f64]) -> Result<(Vec<f64>, AlphaCache), NnError> {
        let rows: Vec<usize> = (0..f.len()).collect();
        self.forward_rows(params, f, &rows)
    }

    /// Evaluates alpha only for the vertices in `rows`; the returned scales
    /// follow `rows` order.
    pub fn forward_rows(&self, params: &[f64], f: &[f64], rows: &[usize]) -> Result<(Vec<f64>, AlphaCache), NnError> {
        if f.len() != self.vertex_count {
            return Err(NnError::Dimension {
                expected: self.vertex_count,
                got: f.len(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.vertex_count) {
            return Err(NnError::Shape(format!("row {bad} out of range")));
        }
        let (latent, h_cache, k_cache) = match (&self.h, &self.k) {
            (Some(h), Some(k)) => {
                let p = ArrayView2::from_shape((1, params.len()), params).map_err(|e| NnError::Shape(e.to_string()))?;
                let (z, hc) = h.forward_cached(p)?;
                let (lat, kc) = k.forward_cached(z.view())?;
                (Some(lat), Some(hc), Some(kc))
            }
            _ => (None, None, None),
        };
        let x = self.g_input(latent.as_ref(), f, rows);
        let (u, g_cache) = self.g.forward_cached(x.view())?;
        let u: Vec<f64> = u.column(0).to_vec();
        let alpha = u.iter().map(|&v| range_activation(self.range, v)).collect();
        Ok((
            alpha,
            AlphaCache {
                h: h_cache,
                k: k_cache,
                g: g_cache,
                u,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn alpha(&self, params: &[f64], f: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(params, f)?.0)
    }

    /// `alpha_bar` and the returned `f_bar` are indexed by vertex; entries
    /// outside the cached rows are ignored / zero.
    pub fn backward(&self, cache: &AlphaCache, alpha_bar: &[f64]) -> Result<AlphaBackward, NnError> {
        let n = self.vertex_count;
        if alpha_bar.len() != n {
            return Err(NnError::Dimension {
                expected: n,
                got: alpha_bar.len(),
            });
        }
        let rows = &cache.rows;
        let d = self.g_latent;
        let u_bar = Array2::from_shape_fn((rows.len(), 1), |(r, _)| alpha_bar[rows[r]] * range_derivative(cache.u[r]));
        let (g_grads, x_bar) = self.g.backward(&cache.g, u_bar.view())?;
        let mut f_bar = vec![0.0; n];
        for (r, &i) in rows.iter().enumerate() {
            f_bar[i] = x_bar[[r, d]] * self.f_scale;
        }
        let (h_grads, k_grads, params_bar) = match (&self.h, &self.k, &cache.h, &cache.k) {
            (Some(h), Some(k), Some(hc), Some(kc)) => {
                let lat_bar = x_bar.slice(ndarray::s![.., ..d]);
                let k_up = match self.variant {
                    AlphaVariant::Main => {
                        let mut up = Array2::zeros((1, n * d));
                        for (r, &i) in rows.iter().enumerate() {
                            up.slice_mut(ndarray::s![0, i * d..(i + 1) * d]).assign(&lat_bar.row(r));
                        }
                        up
                    }
                    _ => lat_bar.sum_axis(Axis(0)).insert_axis(Axis(0)),
                };
                let (kg, z_bar) = k.backward(kc, k_up.view())?;
                let (hg, p_bar) = h.backward(hc, z_bar.view())?;
                (Some(hg), Some(kg), p_bar.row(0).to_vec())
            }
            _ => (None, None, Vec::new()),
        };
        Ok(AlphaBackward {
            grads: AlphaGrads {
                h: h_grads,
                k: k_grads,
                g: g_grads,
            },
            f_bar,
            params_bar,
        })
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for net in [&self.h, &self.k].into_iter().flatten() {
            out.extend(net.flat_parameters());
        }
        out.extend(self.g.flat_parameters());
        out
    }

    pub fn set_flat_parameters(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.parameter_count() {
            return Err(NnError::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for net in [&mut self.h, &mut self.k].into_iter().flatten() {
            let c = net.parameter_count();
            net.set_flat_parameters(&params[offset..offset + c])?;
            offset += c;
        }
        self.g.set_flat_parameters(&params[offset..])
    }
}

/// One Adam state per alpha network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaOptimizer {
    h: Option<Adam>,
    k: Option<Adam>,
    g: Adam,
}

impl AlphaOptimizer {
    pub fn new(config: AdamConfig, nets: &AlphaNetworks) -> Self {
        Self {
            h: nets.h.as_ref().map(|n| Adam::for_mlp(config, n)),
            k: nets.k.as_ref().map(|n| Adam::for_mlp(config, n)),
            g: Adam::for_mlp(config, &nets.g),
        }
    }

    pub fn step(&mut self, nets: &mut AlphaNetworks, grads: &AlphaGrads, lr: f64) -> Result<(), NnError> {
        if let (Some(opt), Some(net), Some(gr)) = (&mut self.h, &mut nets.h, &grads.h) {
            opt.step_mlp_with_lr(net, gr, lr)?;
        }
        if let (Some(opt), Some(net), Some(gr)) = (&mut self.k, &mut nets.k, &grads.k) {
            opt.step_mlp_with_lr(net, gr, lr)?;
        }
        self.g.step_mlp_with_lr(&mut nets.g, &grads.g, lr)
    }
}

/// Result of applying the layer to one garment.
#[derive(Debug, Clone, PartialEq)]
pub struct RefuOutput {
    pub positions: Vec<Vec3>,
    /// Scale per vertex. With predicted scales only penetrating vertices are
    /// evaluated; the others report 1.
    pub alpha: Vec<f64>,
    /// SDF value at the input positions.
    pub f: Vec<f64>,
    /// Raw (unnormalized) SDF gradient at the input positions.
    pub gradient: Vec<Vec3>,
    pub moved: Vec<bool>,
    /// Penetrating vertices left in place because the gradient vanished.
    pub degenerate: Vec<bool>,
}

impl RefuOutput {
    pub fn moved_count(&self) -> usize {
        self.moved.iter().filter(|m| **m).count()
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|m| **m).count()
    }
}

/// Evaluates the SDF at `positions` (values and gradients).
pub fn query_sdf(positions: &[Vec3], engine: &dyn SdfEngine) -> (Vec<f64>, Vec<Vec3>) {
    engine.evaluate(positions).into_iter().map(|s| (s.value, s.gradient)).unzip()
}

/// `x' = x - alpha f grad(f)/|grad(f)|` where `f < 0`; identity elsewhere.
pub fn apply_refu_with(positions: &[Vec3], f: &[f64], gradient: &[Vec3], alpha: &[f64]) -> RefuOutput {
    let n = positions.len();
    let mut out = RefuOutput {
        positions: positions.to_vec(),
        alpha: alpha.to_vec(),
        f: f.to_vec(),
        gradient: gradient.to_vec(),
        moved: vec![false; n],
        degenerate: vec![false; n],
    };
    for i in 0..n {
        if f[i] >= 0.0 {
            continue;
        }
        let len = gradient[i].norm();
        if !(len >= DEGENERATE_GRADIENT) {
            out.degenerate[i] = true;
            continue;
        }
        out.positions[i] = positions[i] - gradient[i] * (alpha[i] * f[i] / len);
        out.moved[i] = true;
    }
    out
}

pub fn apply_refu(positions: &[Vec3], engine: &dyn SdfEngine, alpha: &[f64]) -> RefuOutput {
    let (f, gradient) = query_sdf(positions, engine);
    apply_refu_with(positions, &f, &gradient, alpha)
}

/// Cotangents of one layer application.
#[derive(Debug, Clone, PartialEq)]
pub struct RefuBackward {
    pub positions_bar: Vec<Vec3>,
    /// Explicit `dL/d alpha_i` (zero for unmoved vertices).
    pub alpha_bar: Vec<f64>,
}

/// Reverse pass with alpha treated as an independent input. The caller adds
/// `(d alpha_i / d f_i) * alpha_bar_i * grad f_i` when alpha depends on f
/// (see [`RefuLayer::backward`]).
pub fn refu_backward(
    out: &RefuOutput,
    input: &[Vec3],
    engine: &dyn SdfEngine,
    upstream: &[Vec3],
) -> RefuBackward {
    let n = out.positions.len();
    let mut positions_bar = upstream.to_vec();
    let mut alpha_bar = vec![0.0; n];
    let moved: Vec<usize> = (0..n).filter(|&i| out.moved[i]).collect();
    let mut hvp_points = Vec::with_capacity(moved.len());
    let mut hvp_dirs = Vec::with_capacity(moved.len());
    for &i in &moved {
        let g = out.gradient[i];
        let len = g.norm();
        let nhat = g / len;
        let w = upstream[i];
        let wn = w.dot(&nhat);
        alpha_bar[i] = -wn * out.f[i];
        positions_bar[i] = w - g * (wn * out.alpha[i]);
        hvp_points.push(input[i]);
        hvp_dirs.push(w - nhat * wn);
    }
    if !moved.is_empty() {
        let hv = engine.hessian_vector(&hvp_points, &hvp_dirs);
        for (j, &i) in moved.iter().enumerate() {
            let d = out.alpha[i] * out.f[i];
            let len = out.gradient[i].norm();
            positions_bar[i] -= hv[j] * (d / len);
        }
    }
    RefuBackward {
        positions_bar,
        alpha_bar,
    }
}

/// The layer with its scale mode: fixed (`alpha = 1`) or predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct RefuLayer {
    pub config: RefuConfig,
    pub nets: Option<AlphaNetworks>,
}

#[derive(Debug, Clone)]
pub struct RefuForward {
    pub output: RefuOutput,
    cache: Option<AlphaCache>,
}

impl RefuLayer {
    pub fn new<R: Rng + ?Sized>(config: RefuConfig, rng: &mut R) -> Result<Self, NnError> {
        let nets = match config.scale_mode {
            ScaleMode::Fixed => None,
            ScaleMode::Predicted => Some(AlphaNetworks::new(&config, rng)?),
        };
        Ok(Self { config, nets })
    }

    pub fn fixed(config: RefuConfig) -> Self {
        Self {
            config: RefuConfig {
                scale_mode: ScaleMode::Fixed,
                ..config
            },
            nets: None,
        }
    }

    pub fn forward(&self, params: &[f64], positions: &[Vec3], engine: &dyn SdfEngine) -> Result<RefuForward, NnError> {
        let (f, gradient) = query_sdf(positions, engine);
        self.forward_with(params, positions, &f, &gradient)
    }

    /// Same as [`RefuLayer::forward`] with precomputed SDF values and gradients.
    pub fn forward_with(
        &self,
        params: &[f64],
        positions: &[Vec3],
        f: &[f64],
        gradient: &[Vec3],
    ) -> Result<RefuForward, NnError> {
        let n = positions.len();
        let (alpha, cache) = match &self.nets {
            None => (vec![1.0; n], None),
            Some(nets) => {
                // Only penetrating vertices use their scale.
                let rows: Vec<usize> = (0..n).filter(|&i| f[i] < 0.0).collect();
                let (a, c) = nets.forward_rows(params, f, &rows)?;
                let mut alpha = vec![1.0; n];
                for (&i, v) in rows.iter().zip(a) {
                    alpha[i] = v;
                }
                (alpha, Some(c))
            }
        };
        Ok(RefuForward {
            output: apply_refu_with(positions, f, gradient, &alpha),
            cache,
        })
    }

    /// Full reverse pass: position cotangents (for the backbone) and the
    /// alpha-network weight gradients.
    pub fn backward(
        &self,
        fwd: &RefuForward,
        input: &[Vec3],
        engine: &dyn SdfEngine,
        upstream: &[Vec3],
    ) -> Result<(Vec<Vec3>, Option<AlphaGrads>), NnError> {
        let mut back = refu_backward(&fwd.output, input, engine, upstream);
        match (&self.nets, &fwd.cache) {
            (Some(nets), Some(cache)) => {
                let ab = nets.backward(cache, &back.alpha_bar)?;
                for i in 0..input.len() {
                    if ab.f_bar[i] != 0.0 {
                        back.positions_bar[i] += fwd.output.gradient[i] * ab.f_bar[i];
                    }
                }
                Ok((back.positions_bar, Some(ab.grads)))
            }
            (None, _) => Ok((back.positions_bar, None)),
            (Some(_), None) => Err(NnError::MissingCache),
        }
    }
}

/// Mean alpha over moved vertices, or `None` when nothing moved.
pub fn mean_moved_alpha(out: &RefuOutput) -> Option<f64> {
    let (sum, n) = out
        .alpha
        .iter()
        .zip(&out.moved)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), (a, _)| (s + a, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::SphereSdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere() -> SphereSdf {
        SphereSdf {
            center: Vec3::zeros(),
            radius: 1.0,
        }
    }

    #[test]
    fn unit_scale_projects_onto_the_sphere() {
        let x = [Vec3::new(0.3, 0.4, 0.0)];
        let out = apply_refu(&x, &unit_sphere(), &[1.0]);
        assert!((out.positions[0].norm() - 1.0).abs() < 1e-12);
        assert!(out.moved[0]);
    }

    #[test]
    fn outside_vertices_are_untouched() {
        let x = [Vec3::new(1.3, 0.0, 0.0)];
        let out = apply_refu(&x, &unit_sphere(), &[5.0]);
        assert_eq!(out.positions[0], x[0]);
        assert!(!out.moved[0]);
    }

    #[test]
    fn vanishing_gradient_is_flagged() {
        let out = apply_refu_with(&[Vec3::zeros()], &[-1.0], &[Vec3::zeros()], &[1.0]);
        assert!(out.degenerate[0] && !out.moved[0]);
        assert_eq!(out.positions[0], Vec3::zeros());
    }

    #[test]
    fn range_modes_bound_alpha() {
        for u in [-800.0, -5.0, 0.0, 3.0, 50.0] {
            assert!(range_activation(RangeMode::Acc, u) >= 1.0);
            assert!(range_activation(RangeMode::Approx, u) >= 0.0);
        }
        assert_eq!(range_activation(RangeMode::Acc, -800.0), 1.0);
    }

    #[test]
    fn shared_latent_parameter_count_is_matched() {
        let cfg = RefuConfig::desk(12, 400, SdfMode::Acc);
        let alt = RefuConfig {
            variant: AlphaVariant::SharedLatent,
            ..cfg.clone()
        };
        let (a, b) = (cfg.parameter_count() as f64, alt.parameter_count() as f64);
        assert!((a - b).abs() / a < 0.05, "{a} vs {b}");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(AlphaNetworks::new(&cfg, &mut rng).unwrap().parameter_count(), cfg.parameter_count());
        assert_eq!(AlphaNetworks::new(&alt, &mut rng).unwrap().parameter_count(), alt.parameter_count());
    }

    #[test]
    fn zero_h_gives_bias_as_latent() {
        let cfg = RefuConfig {
            latent_width: 4,
            ..RefuConfig::desk(3, 5, SdfMode::Acc)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nets = AlphaNetworks::new(&cfg, &mut rng).unwrap();
        let h = nets.h.as_mut().unwrap();
        for l in h.layers_mut() {
            l.weight.fill(0.0);
        }
        let expected = h.layers().last().unwrap().bias.to_vec();
        assert_eq!(nets.global_latent(&[0.3, -1.0, 2.0]).unwrap().unwrap(), expected);
    }
}
