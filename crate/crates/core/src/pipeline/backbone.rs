//! Toy garment predictor: an MLP from standardized `(beta, theta, gamma)`
//! to per-vertex offsets from the mean training garment.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::nn::{Activation, ForwardCache, LayerSpec, Mlp, MlpCheckpoint, MlpGrads, NnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Hidden layer widths (ReLU); a linear output layer follows.
    pub hidden: Vec<usize>,
    /// Network outputs are multiplied by this before being added to the
    /// template, meters.
    pub output_scale: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128, 128],
            output_scale: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub net: Mlp,
    pub template: Vec<Vec3>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneCheckpoint {
    pub net: MlpCheckpoint,
    pub template: Vec<[f64; 3]>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_scale: f64,
}

impl Backbone {
    /// Fresh network whose template is the mean target garment and whose
    /// inputs are standardized with the training statistics.
    pub fn new<R: Rng + ?Sized>(
        cfg: &BackboneConfig,
        inputs: &[&[f64]],
        targets: &[&[Vec3]],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let dim = inputs.first().map_or(0, |v| v.len());
        let n = targets.first().map_or(0, |t| t.len());
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(NnError::Shape("backbone needs matching, non-empty inputs and targets".into()));
        }
        let count = inputs.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in inputs {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x / count;
            }
        }
        let mut std = vec![0.0; dim];
        for v in inputs {
            for k in 0..dim {
                std[k] += (v[k] - mean[k]).powi(2) / count;
            }
        }
        let std = std.into_iter().map(|s| if s > 0.0 { s.sqrt() } else { 1.0 }).collect();
        let mut template = vec![Vec3::zeros(); n];
        for t in targets {
            for (a, b) in template.iter_mut().zip(t.iter()) {
                *a += b / count;
            }
        }
        let mut specs: Vec<LayerSpec> = cfg.hidden.iter().map(|&w| LayerSpec::new(w, Activation::Relu)).collect();
        specs.push(LayerSpec::new(3 * n, Activation::Identity));
        let net = Mlp::new(dim, &specs, None, rng)?;
        Ok(Self {
            net,
            template,
            input_mean: mean,
            input_std: std,
            output_scale: cfg.output_scale,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn input_matrix(&self, raws: &[&[f64]]) -> Array2<f64> {
        let dim = self.input_mean.len();
        let mut x = Array2::zeros((raws.len(), dim));
        for (r, raw) in raws.iter().enumerate() {
            for (k, v) in self.normalize(raw).into_iter().enumerate() {
                x[[r, k]] = v;
            }
        }
        x
    }

    fn decode(&self, out: &Array2<f64>) -> Vec<Vec<Vec3>> {
        out.rows()
            .into_iter()
            .map(|row| {
                self.template
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t + Vec3::new(row[3 * i], row[3 * i + 1], row[3 * i + 2]) * self.output_scale)
                    .collect()
            })
            .collect()
    }

    pub fn predict(&self, raw: &[f64]) -> Result<Vec<Vec3>, NnError> {
        let x = self.input_matrix(&[raw]);
        Ok(self.decode(&self.net.forward(x.view())?).pop().expect("one row"))
    }

    /// Batched prediction keeping the cache for [`Backbone::backward`].
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Vec<Vec<Vec3>>, ForwardCache), NnError> {
        let (out, cache) = self.net.forward_cached(x)?;
        Ok((self.decode(&out), cache))
    }

    /// Weight gradients for per-frame position cotangents.
    pub fn backward(&self, cache: &ForwardCache, positions_bar: &[Vec<Vec3>]) -> Result<MlpGrads, NnError> {
        let n = self.vertex_count();
        let mut up = Array2::zeros((positions_bar.len(), 3 * n));
        for (r, bars) in positions_bar.iter().enumerate() {
            for (i, b) in bars.iter().enumerate() {
                for k in 0..3 {
                    up[[r, 3 * i + k]] = b[k] * self.output_scale;
                }
            }
        }
        Ok(self.net.backward(cache, up.view())?.0)
    }

    pub fn checkpoint(&self) -> BackboneCheckpoint {
        BackboneCheckpoint {
            net: MlpCheckpoint::from(&self.net),
            template: self.template.iter().map(|v| [v.x, v.y, v.z]).collect(),
            input_mean: self.input_mean.clone(),
            input_std: self.input_std.clone(),
            output_scale: self.output_scale,
        }
    }

    pub fn from_checkpoint(ck: BackboneCheckpoint) -> Result<Self, NnError> {
        let net = Mlp::try_from(ck.net)?;
        if net.output_dim() != 3 * ck.template.len() || net.input_dim() != ck.input_mean.len() {
            return Err(NnError::Checkpoint("backbone shapes do not match its template".into()));
        }
        Ok(Self {
            net,
            template: ck.template.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect(),
            input_mean: ck.input_mean,
            input_std: ck.input_std,
            output_scale: ck.output_scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Backbone {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let targets = vec![vec![Vec3::x(), Vec3::y()], vec![Vec3::x() * 3.0, Vec3::y() * 3.0]];
        let ir: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let tr: Vec<&[Vec3]> = targets.iter().map(Vec::as_slice).collect();
        let cfg = BackboneConfig {
            hidden: vec![8],
            output_scale: 0.5,
        };
        Backbone::new(&cfg, &ir, &tr, &mut rng).unwrap()
    }

    #[test]
    fn template_and_standardization() {
        let b = tiny();
        assert_eq!(b.template, vec![Vec3::x() * 2.0, Vec3::y() * 2.0]);
        assert_eq!(b.normalize(&[0.0, 1.0]), vec![-1.0, -1.0]);
        assert_eq!(b.net.output_dim(), 6);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let b = tiny();
        let raw = [0.5, 2.5];
        let x = b.input_matrix(&[&raw]);
        let w = vec![vec![Vec3::new(0.3, -0.2, 0.1), Vec3::new(1.0, 0.5, -0.4)]];
        let (_, cache) = b.forward_cached(x.view()).unwrap();
        let grads = b.backward(&cache, &w).unwrap().flatten();
        let loss = |bb: &Backbone| -> f64 {
            let p = bb.predict(&raw).unwrap();
            p.iter().zip(&w[0]).map(|(a, c)| a.dot(c)).sum()
        };
        let base = b.net.flat_parameters();
        for idx in [0, 5, base.len() - 1] {
            let mut plus = b.clone();
            let mut minus = b.clone();
            let h = 1e-6;
            let mut p = base.clone();
            p[idx] += h;
            plus.net.set_flat_parameters(&p).unwrap();
            p[idx] -= 2.0 * h;
            minus.net.set_flat_parameters(&p).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - grads[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", grads[idx]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = tiny();
        let json = serde_json::to_string(&b.checkpoint()).unwrap();
        let back = Backbone::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, b);
    }
}
