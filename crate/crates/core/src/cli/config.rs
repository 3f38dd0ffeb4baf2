use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::distill::TrainConfig;
use crate::synthgen::SynthConfig;
use crate::tff::TffConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Cohort manifest read by train, evaluate, km and simmap.
    pub manifest: PathBuf,
    /// Output directory of every command.
    pub out: PathBuf,
    /// Where evaluate, km and simmap look for `<stage>-trial<k>.rasc`.
    pub checkpoints: PathBuf,
    /// Directory of raw `*.txt` reports for clean-reports.
    pub reports: PathBuf,
    /// Optional prompt document; empty means the built-in prompt.
    pub prompt: PathBuf,
    pub cache: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("cohort/manifest.toml"),
            out: PathBuf::from("out"),
            checkpoints: PathBuf::from("out"),
            reports: PathBuf::from("reports"),
            prompt: PathBuf::new(),
            cache: PathBuf::from("cache/reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSettings {
    /// `mock` or `live`.
    pub provider: String,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            provider: "mock".into(),
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    /// Thresholds for similarity maps.
    pub gammas: Vec<f64>,
    /// Case exported by simmap; empty means the first test case of the trial.
    pub case_id: String,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            gammas: vec![-1.0, 0.25, 0.5, 0.75],
            case_id: String::new(),
        }
    }
}

/// Every setting of every command. Missing keys take defaults, unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisSettings,
    pub llm: LlmSettings,
}

impl Default for RunConfig {
    /// Desk-scale model sized to the synthetic cohort defaults.
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig {
            learning_rate: 3e-5,
            model: TffConfig {
                d_text_in: synth.d_text,
                d_patch_in: synth.d_patch,
                d_model: 32,
                n_heads: 4,
                n_qformer_blocks: 2,
                n_self_blocks: 1,
                ff_multiplier: 2,
                seed: 0,
            },
            ..TrainConfig::default()
        };
        Self {
            paths: Paths::default(),
            synth,
            train,
            analysis: AnalysisSettings::default(),
            llm: LlmSettings::default(),
        }
    }
}

/// Recursively overlays `given` onto `base`; `train.p_mix` is replaced whole.
fn overlay(base: &mut toml::Table, given: toml::Table, prefix: &str) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(bt)), toml::Value::Table(gt)) if path != "train.p_mix" => overlay(bt, gt, &path),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Keys present in `given` but absent from `known`, as dotted paths.
fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if path == "train.p_mix" {
            if let toml::Value::Table(t) = v {
                let allowed: BTreeSet<&str> = ["kind", "alpha"].into();
                out.extend(t.keys().filter(|k| !allowed.contains(k.as_str())).map(|k| format!("{path}.{k}")));
            }
            continue;
        }
        match (known.get(k), v) {
            (None, _) => out.push(path),
            (Some(toml::Value::Table(kt)), toml::Value::Table(gt)) => unknown_keys(gt, kt, &path, out),
            _ => {}
        }
    }
}

impl RunConfig {
    /// Parses and fully validates a configuration document, reporting every
    /// problem at once.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        let known = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut issues = Vec::new();
        unknown_keys(&table, &known, "", &mut issues);
        if !issues.is_empty() {
            return Err(CliError::Config(issues.into_iter().map(|k| format!("unknown key `{k}`")).collect()));
        }
        let mut merged = known;
        overlay(&mut merged, table, "");
        let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn issues(&self) -> Vec<String> {
        let mut issues = self.train.issues();
        if let Err(crate::synthgen::SynthError::Config(synth)) = self.synth.validate() {
            issues.extend(synth);
        }
        if !matches!(self.llm.provider.as_str(), "mock" | "live") {
            issues.push(format!("llm.provider = {:?} (expected \"mock\" or \"live\")", self.llm.provider));
        }
        if self.analysis.gammas.iter().any(|g| !(-1.0..=1.0).contains(g)) {
            issues.push("analysis.gammas must lie in [-1, 1]".into());
        }
        issues
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(issues))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
