use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::tff::TffConfig;

/// Distribution of the mixing weight `p_mix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PMixDist {
    Uniform,
    Beta { alpha: f64 },
}

/// Which parent contributes the `p_mix` share of patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixConvention {
    /// Patch share from each parent equals its label weight.
    LabelConsistent,
    /// `p_mix` of the patches from `a`, the rest from `b`.
    PatchFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub p_aug: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub p_mix: PMixDist,
    pub convention: MixConvention,
    pub seed: u64,
    pub model: TffConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            p_aug: 0.7,
            lambda: 1e-2,
            learning_rate: 1e-5,
            epochs: 60,
            batch_size: 8,
            p_mix: PMixDist::Uniform,
            convention: MixConvention::LabelConsistent,
            seed: 0,
            model: TffConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Collects every violated constraint.
    pub fn issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(-1.0..=1.0).contains(&self.gamma) {
            issues.push(format!("gamma = {} is outside [-1, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.p_aug) {
            issues.push(format!("p_aug = {} is outside [0, 1]", self.p_aug));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            issues.push(format!("lambda = {} must be non-negative", self.lambda));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            issues.push(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            issues.push("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            issues.push(format!("batch_size = {} (need at least 2 for risk sets)", self.batch_size));
        }
        if let PMixDist::Beta { alpha } = self.p_mix {
            if !(alpha.is_finite() && alpha > 0.0) {
                issues.push(format!("p_mix beta alpha = {alpha} must be positive"));
            }
        }
        if let Err(e) = self.model.validate() {
            issues.push(e.to_string());
        }
        issues
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DistillError::Config(issues))
        }
    }
}
