//! Text-guided patch sampling, teacher risk labeling, risk-aware mixup and
//! the two training stages.

mod config;
mod mixup;
mod risk;
mod sampling;
mod train;

pub use config::{MixConvention, PMixDist, TrainConfig};
pub use mixup::{mixup, MixedSample};
pub use risk::{label_risk, median, RiskLabeling};
pub use sampling::{
    export_similarity_map, key_text_feature, patch_embedding, sample_case, sample_patches, write_similarity_csv,
    SampledCase, Sampling, SimilarityRecord,
};
pub use train::{
    evaluate_split, predict_split, train_sampled, train_student, train_teacher, write_log_jsonl, EpochRecord, Inputs,
    TrainOutcome,
};

use std::path::PathBuf;

use crate::datamodel::DataError;
use crate::numcore::NumError;
use crate::survstats::SurvError;
use crate::tff::TffError;

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("keyword index {index} out of range for {tokens} text tokens")]
    KeywordIndex { index: usize, tokens: usize },
    #[error("key text feature has zero norm")]
    ZeroKey,
    #[error("no patch in the bag has a non-zero norm")]
    AllPatchesZero,
    #[error("width mismatch: key has {key} features, patches have {patches}")]
    Width { key: usize, patches: usize },
    #[error("case {0} has no patch coordinates")]
    MissingCoords(String),
    #[error("mixup needs non-empty sampled bags")]
    EmptyMix,
    #[error("p_mix = {0} is outside [0, 1]")]
    PMix(f64),
    #[error("need at least {needed} cases, got {found}")]
    TooFewCases { needed: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] TffError),
    #[error(transparent)]
    Stats(#[from] SurvError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[cfg(test)]
mod tests;
