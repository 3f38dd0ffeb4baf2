use serde::{Deserialize, Serialize};

use super::ReportError;

/// Instructions sent with every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleaningPrompt {
    pub system: String,
    pub task: String,
    pub keywords: Vec<String>,
    /// Topics whose sentences must not survive cleaning.
    pub exclusions: Vec<String>,
}

impl Default for CleaningPrompt {
    fn default() -> Self {
        Self {
            system: "You are a pathologist rewriting surgical pathology reports so that they describe \
                     only what is visible on the hematoxylin-and-eosin whole-slide image."
                .into(),
            task: "Rewrite the report below as a detailed description of microscopic visual \
                   characteristics: tumor type and grade, growth pattern, invasion depth, necrosis, \
                   stroma, inflammation and margins. Remove every statement about the excluded topics. \
                   Do not add findings that are not in the report. Return plain sentences only."
                .into(),
            keywords: vec!["tumor".into(), "cancer".into(), "carcinoma".into()],
            exclusions: vec![
                "lymph node".into(),
                "immunohistochem".into(),
                "genetic".into(),
                "mutation".into(),
                "microsatellite".into(),
            ],
        }
    }
}

impl CleaningPrompt {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.system.trim().is_empty() || self.task.trim().is_empty() {
            return Err(ReportError::InvalidPrompt("prompt text is empty".into()));
        }
        if self.exclusions.iter().all(|e| e.trim().is_empty()) {
            return Err(ReportError::InvalidPrompt("exclusion list is empty".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ReportError> {
        let p: Self = toml::from_str(text).map_err(|e| ReportError::InvalidPrompt(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// User message carrying the report.
    pub fn user_message(&self, raw: &str) -> String {
        format!(
            "{}\nKey terms to preserve: {}.\nExcluded topics: {}.\n\nReport:\n{}",
            self.task,
            self.keywords.join(", "),
            self.exclusions.join(", "),
            raw.trim()
        )
    }
}
