use std::collections::HashMap;
use std::path::Path;

use super::{load_manifest, read_feature_bag, Case, CohortManifest, DataError, FeatureBag, Split};

#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case: Case,
    pub text: FeatureBag,
    pub patches: FeatureBag,
}

/// A validated manifest with every feature bag read into memory.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub cases: Vec<LoadedCase>,
    index: HashMap<String, usize>,
}

impl Cohort {
    pub fn load(manifest_path: &Path) -> Result<Self, DataError> {
        let manifest = load_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut cases = Vec::with_capacity(manifest.cases.len());
        for case in &manifest.cases {
            let text = read_feature_bag(&base.join(&case.text_file))?;
            let patches = read_feature_bag(&base.join(&case.patch_file))?;
            cases.push(LoadedCase {
                case: case.clone(),
                text,
                patches,
            });
        }
        Self::from_parts(manifest, cases)
    }

    pub fn from_parts(manifest: CohortManifest, cases: Vec<LoadedCase>) -> Result<Self, DataError> {
        let index = cases
            .iter()
            .enumerate()
            .map(|(i, c)| (c.case.id.clone(), i))
            .collect::<HashMap<_, _>>();
        if index.len() != cases.len() {
            return Err(DataError::Validation(vec!["duplicate case ids".into()]));
        }
        Ok(Self { manifest, cases, index })
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&LoadedCase> {
        self.position(id).map(|i| &self.cases[i])
    }

    /// Positions of `ids` in [`Cohort::cases`].
    pub fn positions(&self, ids: &[String]) -> Result<Vec<usize>, DataError> {
        ids.iter()
            .map(|id| {
                self.position(id)
                    .ok_or_else(|| DataError::Validation(vec![format!("unknown case {id}")]))
            })
            .collect()
    }

    pub fn trial(&self, k: usize) -> Result<&Split, DataError> {
        self.manifest.trials.get(k).ok_or_else(|| {
            DataError::Validation(vec![format!(
                "trial {k} out of range (manifest has {})",
                self.manifest.trials.len()
            )])
        })
    }
}
