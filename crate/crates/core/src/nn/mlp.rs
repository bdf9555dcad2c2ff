use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Identity,
    /// `relu'(0)` is taken as 0.
    Relu,
    Softplus { beta: f64 },
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Softplus { beta } => softplus(z, beta),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => sigmoid(beta * z),
        }
    }

    #[inline]
    pub fn second_derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 0.0,
            Activation::Softplus { beta } => {
                let s = sigmoid(beta * z);
                beta * s * (1.0 - s)
            }
        }
    }

    fn is_identity(self) -> bool {
        matches!(self, Activation::Identity)
    }
}

/// `ln(1 + exp(beta z)) / beta` without overflow for large `beta z`.
#[inline]
pub fn softplus(z: f64, beta: f64) -> f64 {
    let t = beta * z;
    (t.max(0.0) + (-t.abs()).exp().ln_1p()) / beta
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `act(W x + b)` with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self, NnError> {
        if weight.nrows() != bias.len() {
            return Err(NnError::Shape(format!(
                "weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Multilayer perceptron over row-major batches `(batch, features)`.
///
/// With `skip = Some(l)`, layer `l` sees the previous layer's output with
/// the network input appended.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Dense>,
    skip: Option<usize>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    batch: usize,
}

#[derive(Debug, Clone)]
pub struct DualCache {
    inputs: Vec<Array2<f64>>,
    tangent_inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pre_tangent: Vec<Array2<f64>>,
    batch: usize,
}

impl Mlp {
    /// Random network with `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// weights and biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        specs: &[LayerSpec],
        skip: Option<usize>,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let dims = layer_input_dims(input_dim, specs, skip)?;
        let layers = specs
            .iter()
            .zip(dims)
            .map(|(spec, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((spec.width, fan_in), |_| rng.gen_range(-bound..=bound));
                let bias = Array1::from_shape_fn(spec.width, |_| rng.gen_range(-bound..=bound));
                Dense {
                    weight,
                    bias,
                    activation: spec.activation,
                }
            })
            .collect();
        Ok(Self {
            input_dim,
            layers,
            skip,
        })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Dense>, skip: Option<usize>) -> Result<Self, NnError> {
        let specs: Vec<LayerSpec> = layers
            .iter()
            .map(|l| LayerSpec::new(l.out_dim(), l.activation))
            .collect();
        let dims = layer_input_dims(input_dim, &specs, skip)?;
        for (i, (layer, d)) in layers.iter().zip(dims).enumerate() {
            if layer.in_dim() != d {
                return Err(NnError::Shape(format!(
                    "layer {i} expects {} inputs but receives {d}",
                    layer.in_dim()
                )));
            }
        }
        Ok(Self {
            input_dim,
            layers,
            skip,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Dense::out_dim)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn skip(&self) -> Option<usize> {
        self.skip
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim {
            return Err(NnError::Dimension {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn layer_input(&self, l: usize, a: Array2<f64>, x: &ArrayView2<f64>) -> Array2<f64> {
        if self.skip == Some(l) {
            concatenate![Axis(1), a, *x]
        } else {
            a
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let input = self.layer_input(l, a, &x);
            let mut z = input.dot(&layer.weight.t());
            z += &layer.bias;
            if !layer.activation.is_identity() {
                let act = layer.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| NnError::Shape(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let input = self.layer_input(l, a, &x);
            let mut z = input.dot(&layer.weight.t());
            z += &layer.bias;
            let act = layer.activation;
            a = if act.is_identity() { z.clone() } else { z.mapv(|v| act.apply(v)) };
            inputs.push(input);
            pre.push(z);
        }
        let batch = x.nrows();
        Ok((a, ForwardCache { inputs, pre, batch }))
    }

    /// Reverse-mode pass: weight gradients of `sum(upstream * output)` and
    /// the input cotangent.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>), NnError> {
        if upstream.nrows() != cache.batch || upstream.ncols() != self.output_dim() {
            return Err(NnError::Shape(format!(
                "upstream {:?} does not match cached batch {} x {}",
                upstream.dim(),
                cache.batch,
                self.output_dim()
            )));
        }
        if cache.pre.len() != self.layers.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut x_bar = Array2::zeros((cache.batch, self.input_dim));
        let mut g = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = layer.activation;
            let dz = if act.is_identity() {
                g
            } else {
                let mut d = cache.pre[l].mapv(|v| act.derivative(v));
                d *= &g;
                d
            };
            grads.weights[l] = dz.t().dot(&cache.inputs[l]);
            grads.biases[l] = dz.sum_axis(Axis(0));
            let d_in = dz.dot(&layer.weight);
            g = self.route_input_cotangent(l, d_in, &mut x_bar);
        }
        Ok((grads, x_bar))
    }

    fn route_input_cotangent(&self, l: usize, d_in: Array2<f64>, x_bar: &mut Array2<f64>) -> Array2<f64> {
        if l == 0 {
            *x_bar += &d_in;
            return Array2::zeros((0, 0));
        }
        if self.skip == Some(l) {
            let prev = d_in.ncols() - self.input_dim;
            *x_bar += &d_in.slice(s![.., prev..]);
            d_in.slice(s![.., ..prev]).to_owned()
        } else {
            d_in
        }
    }

    /// Forward pass carrying a tangent `v` alongside `x`. Returns the output
    /// and its directional derivative `J v`.
    pub fn forward_dual(
        &self,
        x: ArrayView2<f64>,
        v: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, DualCache), NnError> {
        self.check_input(&x)?;
        if v.dim() != x.dim() {
            return Err(NnError::Shape(format!("tangent {:?} vs input {:?}", v.dim(), x.dim())));
        }
        let n = self.layers.len();
        let mut cache = DualCache {
            inputs: Vec::with_capacity(n),
            tangent_inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            pre_tangent: Vec::with_capacity(n),
            batch: x.nrows(),
        };
        let mut a = x.to_owned();
        let mut a_dot = v.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let input = self.layer_input(l, a, &x);
            let t_input = self.layer_input(l, a_dot, &v);
            let mut z = input.dot(&layer.weight.t());
            z += &layer.bias;
            let z_dot = t_input.dot(&layer.weight.t());
            let act = layer.activation;
            if act.is_identity() {
                a = z.clone();
                a_dot = z_dot.clone();
            } else {
                a = z.mapv(|t| act.apply(t));
                let mut d = z.mapv(|t| act.derivative(t));
                d *= &z_dot;
                a_dot = d;
            }
            cache.inputs.push(input);
            cache.tangent_inputs.push(t_input);
            cache.pre.push(z);
            cache.pre_tangent.push(z_dot);
        }
        Ok((a, a_dot, cache))
    }

    /// Reverse pass through [`Mlp::forward_dual`]: gradients of
    /// `sum(y_bar * y + y_dot_bar * y_dot)` with respect to the weights, the
    /// input `x` and the tangent `v`. Taking `y_dot_bar = 1` for a scalar
    /// network with tangent `u` yields `d/dθ (∇ₓf · u)` and the
    /// Hessian-vector product `H u` as the `x` cotangent.
    pub fn backward_dual(
        &self,
        cache: &DualCache,
        y_bar: ArrayView2<f64>,
        y_dot_bar: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>, Array2<f64>), NnError> {
        let expect = (cache.batch, self.output_dim());
        if y_bar.dim() != expect || y_dot_bar.dim() != expect {
            return Err(NnError::Shape(format!(
                "cotangents {:?}/{:?} vs output {:?}",
                y_bar.dim(),
                y_dot_bar.dim(),
                expect
            )));
        }
        if cache.pre.len() != self.layers.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut x_bar = Array2::zeros((cache.batch, self.input_dim));
        let mut v_bar = Array2::zeros((cache.batch, self.input_dim));
        let mut a_bar = y_bar.to_owned();
        let mut a_dot_bar = y_dot_bar.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = layer.activation;
            let (z_bar, z_dot_bar) = if act.is_identity() {
                (a_bar, a_dot_bar)
            } else {
                let z = &cache.pre[l];
                let z_dot = &cache.pre_tangent[l];
                let mut z_dot_bar = z.mapv(|t| act.derivative(t));
                z_dot_bar *= &a_dot_bar;
                let mut z_bar = z.mapv(|t| act.derivative(t));
                z_bar *= &a_bar;
                let mut curvature = z.mapv(|t| act.second_derivative(t));
                curvature *= z_dot;
                curvature *= &a_dot_bar;
                z_bar += &curvature;
                (z_bar, z_dot_bar)
            };
            let mut gw = z_bar.t().dot(&cache.inputs[l]);
            gw += &z_dot_bar.t().dot(&cache.tangent_inputs[l]);
            grads.weights[l] = gw;
            grads.biases[l] = z_bar.sum_axis(Axis(0));
            let d_in = z_bar.dot(&layer.weight);
            let d_tin = z_dot_bar.dot(&layer.weight);
            a_bar = self.route_input_cotangent(l, d_in, &mut x_bar);
            a_dot_bar = self.route_input_cotangent(l, d_tin, &mut v_bar);
        }
        Ok((grads, x_bar, v_bar))
    }

    /// Forward-mode directional derivative `J(x) v` for a single input.
    pub fn input_jacobian_vector(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, NnError> {
        if v.len() != x.len() {
            return Err(NnError::Dimension {
                expected: x.len(),
                got: v.len(),
            });
        }
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| NnError::Shape(e.to_string()))?;
        let vv = ArrayView2::from_shape((1, v.len()), v).map_err(|e| NnError::Shape(e.to_string()))?;
        let (_, y_dot, _) = self.forward_dual(xv, vv)?;
        Ok(y_dot.into_raw_vec_and_offset().0)
    }

    /// Gradient of a scalar-output network with respect to its inputs, one
    /// row per batch entry.
    pub fn input_gradient(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>), NnError> {
        if self.output_dim() != 1 {
            return Err(NnError::Shape("input_gradient needs a scalar network".into()));
        }
        let (y, cache) = self.forward_cached(x)?;
        let ones = Array2::ones((x.nrows(), 1));
        let (_, grad) = self.backward(&cache, ones.view())?;
        Ok((y, grad))
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_parameters(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.parameter_count() {
            return Err(NnError::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Visits `(parameter, gradient)` pairs in flat order.
    pub fn zip_parameters_mut(&mut self, grads: &MlpGrads, mut f: impl FnMut(&mut f64, f64)) -> Result<(), NnError> {
        grads.check_matches(self)?;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (p, g) in layer.weight.iter_mut().zip(grads.weights[l].iter()) {
                f(p, *g);
            }
            for (p, g) in layer.bias.iter_mut().zip(grads.biases[l].iter()) {
                f(p, *g);
            }
        }
        Ok(())
    }
}

fn layer_input_dims(input_dim: usize, specs: &[LayerSpec], skip: Option<usize>) -> Result<Vec<usize>, NnError> {
    if let Some(k) = skip {
        if k == 0 || k >= specs.len() {
            return Err(NnError::Shape(format!(
                "skip layer {k} must be in 1..{}",
                specs.len()
            )));
        }
    }
    let mut dims = Vec::with_capacity(specs.len());
    let mut prev = input_dim;
    for (l, spec) in specs.iter().enumerate() {
        dims.push(if skip == Some(l) { prev + input_dim } else { prev });
        prev = spec.width;
    }
    Ok(dims)
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn check_matches(&self, net: &Mlp) -> Result<(), NnError> {
        let ok = self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net
                .layers
                .iter()
                .enumerate()
                .all(|(l, layer)| self.weights[l].dim() == layer.weight.dim() && self.biases[l].len() == layer.bias.len());
        if ok {
            Ok(())
        } else {
            Err(NnError::Shape("gradient shapes do not match the network".into()))
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.weights {
            *a *= k;
        }
        for a in &mut self.biases {
            *a *= k;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
