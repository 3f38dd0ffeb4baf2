use serde::Serialize;

use super::DistillError;
use crate::datamodel::LoadedCase;
use crate::tff::{forward, TffParams};

/// Teacher risk bits for the training split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskLabeling {
    pub ids: Vec<String>,
    /// `sigmoid(y)` per case.
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub bits: Vec<bool>,
}

impl RiskLabeling {
    /// Bits from precomputed raw scores.
    pub fn from_raw(ids: Vec<String>, raw: &[f64]) -> Result<Self, DistillError> {
        if raw.len() < 2 || ids.len() != raw.len() {
            return Err(DistillError::TooFewCases {
                needed: 2,
                found: raw.len().min(ids.len()),
            });
        }
        let scores: Vec<f64> = raw.iter().map(|&y| 1.0 / (1.0 + (-y).exp())).collect();
        let threshold = median(&scores);
        let bits = scores.iter().map(|&s| s >= threshold).collect();
        Ok(Self {
            ids,
            scores,
            threshold,
            bits,
        })
    }

    pub fn bit(&self, id: &str) -> Option<bool> {
        self.ids.iter().position(|i| i == id).map(|p| self.bits[p])
    }
}

/// Median with the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the teacher on full bags and thresholds `sigmoid(y)` at the median.
pub fn label_risk<'a>(
    teacher: &TffParams,
    cases: impl IntoIterator<Item = &'a LoadedCase>,
) -> Result<RiskLabeling, DistillError> {
    let mut ids = Vec::new();
    let mut raw = Vec::new();
    for c in cases {
        ids.push(c.case.id.clone());
        raw.push(forward(teacher, &c.text, &c.patches)?.y);
    }
    RiskLabeling::from_raw(ids, &raw)
}
