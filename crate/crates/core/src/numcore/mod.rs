//! Dense 2-D tensors, a reverse-mode tape, attention building blocks and Adam.
//!
//! Every value is a matrix of `f64`; scalars are `1×1`. Operations recorded
//! on a [`Tape`] fail with [`NumError::NonFinite`] as soon as a forward value
//! stops being finite, naming the offending op.

mod adam;
pub mod gradcheck;
mod nn;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use nn::{feed_forward, layer_norm, linear, multi_head_attention, AttentionWeights, FeedForwardWeights, LayerNormWeights, LinearWeights};
pub use tape::{log_sum_exp, softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;


#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}
