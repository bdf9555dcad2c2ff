//! Signed distance engines. Negative inside, positive outside, gradient
//! pointing toward increasing distance.

mod exact;
mod neural;

pub use exact::{ExactSdf, SignedDistance};
pub use neural::{
    curve_csv, evaluate_sdf, input_matrix, sample_dataset, sample_training_points, sdf_loss, NeuralSdf, NeuralSdfError,
    SampleCategory, SampleCounts, SdfDataset, SdfEpochRecord, SdfEval, SdfLoss, SdfNetConfig, SdfSample, SdfTrainConfig,
    SdfTrainer, SdfTrainerCheckpoint, BBOX_SIZE, MRE_GUARD,
};

use crate::geometry::Vec3;

/// Value and (not necessarily unit) spatial gradient of an SDF at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfValue {
    pub value: f64,
    pub gradient: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Exact,
    Neural,
}

/// A body SDF bound to one body configuration.
pub trait SdfEngine: Send + Sync {
    fn kind(&self) -> EngineKind;

    fn evaluate(&self, points: &[Vec3]) -> Vec<SdfValue>;

    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        self.evaluate(points).into_iter().map(|s| s.value).collect()
    }

    /// Hessian-vector products `H(points[i]) * dirs[i]`.
    fn hessian_vector(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<Vec3>;
}

/// Analytic sphere SDF, used as a reference engine in tests and examples.
#[derive(Debug, Clone, Copy)]
pub struct SphereSdf {
    pub center: Vec3,
    pub radius: f64,
}

impl SdfEngine for SphereSdf {
    fn kind(&self) -> EngineKind {
        EngineKind::Exact
    }

    fn evaluate(&self, points: &[Vec3]) -> Vec<SdfValue> {
        points
            .iter()
            .map(|p| {
                let d = p - self.center;
                let r = d.norm();
                let gradient = if r > 0.0 { d / r } else { Vec3::z() };
                SdfValue {
                    value: r - self.radius,
                    gradient,
                }
            })
            .collect()
    }

    fn hessian_vector(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<Vec3> {
        points
            .iter()
            .zip(dirs)
            .map(|(p, v)| {
                let d = p - self.center;
                let r = d.norm();
                if r == 0.0 {
                    return Vec3::zeros();
                }
                let n = d / r;
                (v - n * n.dot(v)) / r
            })
            .collect()
    }
}
