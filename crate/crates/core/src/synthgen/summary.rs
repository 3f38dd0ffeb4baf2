use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::datamodel::CohortManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseTruth {
    pub id: String,
    /// Latent risk in `[0, 1]`.
    pub z: f64,
    /// One flag per patch row, 1 for tumor.
    pub tumor: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub cases: Vec<CaseTruth>,
}

impl GroundTruth {
    pub fn case(&self, id: &str) -> Option<&CaseTruth> {
        self.cases.iter().find(|c| c.id == id)
    }
}

pub fn save_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), SynthError> {
    let text = toml::to_string(truth).map_err(|e| SynthError::Syntax(e.to_string()))?;
    fs::write(path, text).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| SynthError::Syntax(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub n_cases: usize,
    pub event_rate: f64,
    pub median_time: f64,
    pub mean_tumor_fraction: f64,
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:>10}", "cases", self.n_cases)?;
        writeln!(f, "{:<22}{:>10.4}", "event rate", self.event_rate)?;
        writeln!(f, "{:<22}{:>10.4}", "median time", self.median_time)?;
        write!(f, "{:<22}{:>10.4}", "mean tumor fraction", self.mean_tumor_fraction)
    }
}

/// Summary statistics. The ground truth must list the manifest's cases in
/// the same order.
pub fn describe(manifest: &CohortManifest, truth: &GroundTruth) -> Result<CohortSummary, SynthError> {
    if manifest.cases.len() != truth.cases.len() {
        return Err(SynthError::Misaligned(format!(
            "{} manifest cases, {} ground-truth cases",
            manifest.cases.len(),
            truth.cases.len()
        )));
    }
    for (c, t) in manifest.cases.iter().zip(&truth.cases) {
        if c.id != t.id {
            return Err(SynthError::Misaligned(format!("manifest case {} paired with {}", c.id, t.id)));
        }
        if t.tumor.is_empty() {
            return Err(SynthError::Misaligned(format!("case {} has no patch flags", t.id)));
        }
    }
    let n = manifest.cases.len();
    if n == 0 {
        return Err(SynthError::Misaligned("empty cohort".into()));
    }
    let events = manifest.cases.iter().filter(|c| c.label.observed()).count();
    let mut times: Vec<f64> = manifest.cases.iter().map(|c| c.label.time).collect();
    times.sort_by(f64::total_cmp);
    let median_time = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let mean_tumor_fraction = truth
        .cases
        .iter()
        .map(|t| t.tumor.iter().map(|&f| f as f64).sum::<f64>() / t.tumor.len() as f64)
        .sum::<f64>()
        / n as f64;
    Ok(CohortSummary {
        n_cases: n,
        event_rate: events as f64 / n as f64,
        median_time,
        mean_tumor_fraction,
    })
}
