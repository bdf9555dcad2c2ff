use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Dense, Mlp, NnError};

pub const MLP_FORMAT: &str = "refu-mlp";
pub const MLP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `(out_dim, in_dim)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub skip: Option<usize>,
    pub layers: Vec<LayerRecord>,
}

impl From<&Mlp> for MlpCheckpoint {
    fn from(net: &Mlp) -> Self {
        Self {
            format: MLP_FORMAT.to_string(),
            version: MLP_VERSION,
            input_dim: net.input_dim(),
            skip: net.skip(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = NnError;

    fn try_from(ck: MlpCheckpoint) -> Result<Self, NnError> {
        if ck.format != MLP_FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != MLP_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let layers = ck
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let weight = Array2::from_shape_vec((r.out_dim, r.in_dim), r.weight)
                    .map_err(|e| NnError::Checkpoint(format!("layer {i}: {e}")))?;
                Dense::new(weight, Array1::from(r.bias), r.activation)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Mlp::from_layers(ck.input_dim, layers, ck.skip)
    }
}

pub fn mlp_to_json(net: &Mlp) -> serde_json::Value {
    serde_json::to_value(MlpCheckpoint::from(net)).expect("checkpoint serializes")
}

pub fn mlp_from_json(value: serde_json::Value) -> Result<Mlp, NnError> {
    let ck: MlpCheckpoint = serde_json::from_value(value)?;
    Mlp::try_from(ck)
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<(), NnError> {
    let text = serde_json::to_string(&MlpCheckpoint::from(net))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp, NnError> {
    let text = std::fs::read_to_string(path)?;
    let ck: MlpCheckpoint = serde_json::from_str(&text)?;
    Mlp::try_from(ck)
}
