use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_bag_header, split_sizes, DataError, Split, SurvivalLabel, N_TRIALS};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub id: String,
    /// Relative to the manifest's directory.
    pub patch_file: PathBuf,
    pub text_file: PathBuf,
    pub token_strings: Vec<String>,
    pub keyword_token_indices: Vec<usize>,
    pub label: SurvivalLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub cases: Vec<Case>,
    pub trials: Vec<Split>,
}

impl CohortManifest {
    pub fn new(cases: Vec<Case>, trials: Vec<Split>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            cases,
            trials,
        }
    }

    pub fn case(&self, id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.id.clone()).collect()
    }

    pub fn to_toml(&self) -> Result<String, DataError> {
        toml::to_string(self).map_err(|e| DataError::ManifestSyntax(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::ManifestSyntax(e.to_string()))
    }

    /// Checks every case and split invariant, resolving feature files
    /// against `base_dir`. Reports all problems at once.
    pub fn validate(&self, base_dir: &Path) -> Result<(), DataError> {
        let mut issues = Vec::new();
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            issues.push(format!(
                "schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let mut ids = HashSet::new();
        for case in &self.cases {
            let id = &case.id;
            if id.is_empty() {
                issues.push("case with empty id".into());
            }
            if !ids.insert(id.as_str()) {
                issues.push(format!("case {id}: duplicate id"));
            }
            if let Err(e) = case.label.validate() {
                issues.push(format!("case {id}: {e}"));
            }
            match read_bag_header(&base_dir.join(&case.text_file)) {
                Ok(h) => {
                    let rows = h.n as usize;
                    if case.token_strings.len() != rows {
                        issues.push(format!(
                            "case {id}: {} token strings for {rows} text-feature rows",
                            case.token_strings.len()
                        ));
                    }
                    for &k in &case.keyword_token_indices {
                        if k >= rows {
                            issues.push(format!("case {id}: keyword index {k} out of range for {rows} tokens"));
                        }
                    }
                }
                Err(e) => issues.push(format!("case {id}: text file {}: {e}", case.text_file.display())),
            }
            if let Err(e) = read_bag_header(&base_dir.join(&case.patch_file)) {
                issues.push(format!("case {id}: patch file {}: {e}", case.patch_file.display()));
            }
            let mut seen = HashSet::new();
            if case.keyword_token_indices.iter().any(|k| !seen.insert(*k)) {
                issues.push(format!("case {id}: repeated keyword index"));
            }
        }

        if self.trials.len() != N_TRIALS {
            issues.push(format!("{} trials (expected {N_TRIALS})", self.trials.len()));
        }
        let (n_train, n_val, n_test) = split_sizes(self.cases.len());
        for (t, split) in self.trials.iter().enumerate() {
            let mut role: HashMap<&str, &str> = HashMap::new();
            for (name, set) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                for id in set {
                    if !ids.contains(id.as_str()) {
                        issues.push(format!("trial {t}: unknown case {id} in {name}"));
                    } else if let Some(prev) = role.insert(id.as_str(), name) {
                        issues.push(format!("trial {t}: case {id} in both {prev} and {name}"));
                    }
                }
            }
            let missing: Vec<&str> = self
                .cases
                .iter()
                .map(|c| c.id.as_str())
                .filter(|id| !role.contains_key(id))
                .collect();
            if !missing.is_empty() {
                issues.push(format!("trial {t}: cases not assigned: {}", missing.join(", ")));
            }
            let sizes = (split.train.len(), split.val.len(), split.test.len());
            if sizes != (n_train, n_val, n_test) {
                issues.push(format!(
                    "trial {t}: sizes {sizes:?} do not follow the 0.6/0.2/0.2 rule {:?}",
                    (n_train, n_val, n_test)
                ));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DataError::Validation(issues))
        }
    }
}

pub fn save_manifest(manifest: &CohortManifest, path: &Path) -> Result<(), DataError> {
    fs::write(path, manifest.to_toml()?).map_err(io_err(path))
}

/// Parses and fully validates a manifest; file paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<CohortManifest, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest = CohortManifest::from_toml(&text)?;
    manifest.validate(path.parent().unwrap_or(Path::new(".")))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{make_splits, write_feature_bag, FeatureBag};
    use crate::numcore::Tensor;

    fn fixture(dir: &Path, n: usize) -> CohortManifest {
        fs::create_dir_all(dir.join("f")).unwrap();
        let mut cases = Vec::new();
        for i in 0..n {
            let id = format!("case{i}");
            let patch = FeatureBag::new(Tensor::filled(3, 2, i as f64), Some(vec![(0, 0), (1, 0), (0, 1)])).unwrap();
            let text = FeatureBag::new(Tensor::filled(2, 4, 0.5), None).unwrap();
            let patch_file = PathBuf::from(format!("f/{id}_p.rasb"));
            let text_file = PathBuf::from(format!("f/{id}_t.rasb"));
            write_feature_bag(&patch, &dir.join(&patch_file)).unwrap();
            write_feature_bag(&text, &dir.join(&text_file)).unwrap();
            cases.push(Case {
                id,
                patch_file,
                text_file,
                token_strings: vec!["the".into(), "tumor".into()],
                keyword_token_indices: vec![1],
                label: SurvivalLabel::new(10.0 + i as f64, (i % 2) as f64).unwrap(),
            });
        }
        let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
        CohortManifest::new(cases, make_splits(&ids, 3).unwrap())
    }

    #[test]
    fn minimal_manifest_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), 5);
        let path = dir.path().join("manifest.toml");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn keyword_index_out_of_range_names_case() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fixture(dir.path(), 5);
        m.cases[3].keyword_token_indices = vec![2];
        let path = dir.path().join("manifest.toml");
        save_manifest(&m, &path).unwrap();
        match load_manifest(&path) {
            Err(DataError::Validation(issues)) => {
                assert_eq!(issues.len(), 1, "{issues:?}");
                assert!(issues[0].contains("case3"), "{issues:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn overlap_and_missing_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fixture(dir.path(), 10);
        let moved = m.trials[0].train[0].clone();
        m.trials[0].test.push(moved.clone());
        fs::remove_file(dir.path().join(&m.cases[7].patch_file)).unwrap();
        let Err(DataError::Validation(issues)) = m.validate(dir.path()) else {
            panic!("expected validation failure");
        };
        assert!(issues.iter().any(|s| s.contains(&moved) && s.contains("both")), "{issues:?}");
        assert!(issues.iter().any(|s| s.contains("case7") && s.contains("patch file")), "{issues:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), 5);
        let text = m.to_toml().unwrap().replacen("schema_version = 1", "schema_version = 1\nextra = 3", 1);
        assert!(matches!(CohortManifest::from_toml(&text), Err(DataError::ManifestSyntax(_))));
    }
}
