//! Synthetic cohorts with a planted tumor-patch signal, matching text
//! tokens and exponential survival times.

mod generate;
mod summary;

pub use generate::{generate, generate_cohort, SynthConfig, SyntheticCohort, FILLER_WORDS, KEYWORD};
pub use summary::{describe, load_ground_truth, save_ground_truth, CaseTruth, CohortSummary, GroundTruth};

use std::path::PathBuf;

use crate::datamodel::DataError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("ground truth does not match the manifest: {0}")]
    Misaligned(String),
    #[error("ground truth document: {0}")]
    Syntax(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}
