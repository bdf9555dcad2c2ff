//! Small dense networks with hand-written reverse, forward and
//! forward-over-reverse differentiation, plus Adam and JSON checkpoints.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_mlp, mlp_from_json, mlp_to_json, save_mlp, MlpCheckpoint};
pub use mlp::{
    sigmoid, softplus, Activation, Dense, DualCache, ForwardCache, LayerSpec, Mlp, MlpGrads,
};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("expected input dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a matching forward cache")]
    MissingCache,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
