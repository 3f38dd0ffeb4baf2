//! On-disk cohort representation: RASB feature bags, survival labels, the
//! TOML manifest, and Monte-Carlo train/val/test splits.

mod bag;
mod cohort;
mod manifest;
mod splits;

pub use bag::{read_bag_header, read_feature_bag, write_feature_bag, BagHeader, FeatureBag, BAG_MAGIC, BAG_VERSION};
pub use cohort::{Cohort, LoadedCase};
pub use manifest::{load_manifest, save_manifest, Case, CohortManifest, MANIFEST_SCHEMA_VERSION};
pub use splits::{make_splits, split_sizes, Split, N_TRIALS};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Observed follow-up time (days) and event indicator. Events are 0/1 for
/// real cases and fractional only after mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub time: f64,
    pub event: f64,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: f64) -> Result<Self, DataError> {
        let label = Self { time, event };
        label.validate()?;
        Ok(label)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(DataError::InvalidLabel(format!("time must be positive, got {}", self.time)));
        }
        if !(0.0..=1.0).contains(&self.event) {
            return Err(DataError::InvalidLabel(format!("event must lie in [0, 1], got {}", self.event)));
        }
        Ok(())
    }

    /// Binary event status used by metrics (threshold 0.5).
    pub fn observed(&self) -> bool {
        self.event >= 0.5
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"RASB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension overflow: {n} x {d}")]
    DimensionOverflow { n: u32, d: u32 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid feature bag: {0}")]
    InvalidBag(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("manifest syntax: {0}")]
    ManifestSyntax(String),
    #[error("manifest validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("need at least 5 cases to split, got {0}")]
    TooFewCases(usize),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
