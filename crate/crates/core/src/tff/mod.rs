//! Text-fused transformer: text projector, token-preserving text encoder,
//! patch self-attention, text-queried cross-attention, mean pooling and a
//! scalar risk head.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, forward_on_tape, BoundParams, ForwardOutput, ForwardVars};
pub(crate) use forward::forward_tensors;
pub use params::{expected_param_count, init_params, TffConfig, TffParams};

use std::path::PathBuf;

use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum TffError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("config mismatch in `{field}`: expected {expected}, checkpoint has {found}")]
    ConfigMismatch {
        field: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("empty {0} bag")]
    EmptyBag(&'static str),
    #[error("{bag} features have width {found}, model expects {expected}")]
    WidthMismatch {
        bag: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}
