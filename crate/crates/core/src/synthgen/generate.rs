use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{save_ground_truth, CaseTruth, GroundTruth, SynthError};
use crate::datamodel::{
    make_splits, save_manifest, write_feature_bag, Case, Cohort, CohortManifest, FeatureBag, LoadedCase, SurvivalLabel,
};
use crate::numcore::Tensor;
use crate::reportprep::find_keyword_tokens;

pub const KEYWORD: &str = "tumor";
/// Background words; none is a substring of the keyword or contains it.
pub const FILLER_WORDS: [&str; 10] = [
    "the", "shows", "glands", "stroma", "with", "mucosa", "cells", "nuclei", "and", "lining",
];
const TEXT_TOKENS: usize = 8;
const N_BACKGROUND: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_cases: usize,
    pub d_patch: usize,
    pub d_text: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Tumor fraction is `0.05 + link_slope * z`.
    pub link_slope: f64,
    pub beta: f64,
    pub base_hazard: f64,
    pub censor_hazard: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cases: 200,
            d_patch: 32,
            d_text: 32,
            n_min: 16,
            n_max: 48,
            link_slope: 0.6,
            beta: 1.5,
            base_hazard: 0.1,
            censor_hazard: 0.09,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Same layout with a hazard coefficient large enough that the latent
    /// risk separates outcomes clearly.
    pub fn strong_signal() -> Self {
        Self {
            beta: 6.0,
            censor_hazard: 0.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut issues = Vec::new();
        if self.n_cases < 10 {
            issues.push(format!("n_cases = {} (need at least 10)", self.n_cases));
        }
        if self.d_patch == 0 || self.d_text == 0 {
            issues.push("feature widths must be positive".into());
        }
        if self.n_min < 4 {
            issues.push(format!("n_min = {} (need at least 4)", self.n_min));
        }
        if self.n_max < self.n_min {
            issues.push(format!("n_max = {} is below n_min = {}", self.n_max, self.n_min));
        }
        let positive = [
            ("link_slope", self.link_slope),
            ("base_hazard", self.base_hazard),
            ("noise", self.noise),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                issues.push(format!("{name} = {v} (must be positive)"));
            }
        }
        for (name, v) in [("beta", self.beta), ("censor_hazard", self.censor_hazard)] {
            if !(v.is_finite() && v >= 0.0) {
                issues.push(format!("{name} = {v} (must be non-negative)"));
            }
        }
        if self.link_slope + 0.05 > 1.0 {
            issues.push(format!("link_slope = {} pushes tumor fraction above 1", self.link_slope));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SynthError::Config(issues))
        }
    }
}

/// An in-memory cohort together with its planted truth.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub truth: GroundTruth,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, normal: &Normal<f64>, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal.sample(rng)).collect()
}

fn noisy(rng: &mut ChaCha8Rng, normal: &Normal<f64>, center: &[f64], sigma: f64) -> Vec<f64> {
    center.iter().map(|c| c + sigma * normal.sample(rng)).collect()
}

fn case_paths(id: &str) -> (PathBuf, PathBuf) {
    (
        PathBuf::from(format!("features/{id}.patches.rasb")),
        PathBuf::from(format!("features/{id}.text.rasb")),
    )
}

/// Builds the cohort in memory. The RNG stream is consumed in a fixed order
/// so the output is a pure function of the config.
pub fn generate_cohort(config: &SynthConfig) -> Result<SyntheticCohort, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let tumor_proto = gaussian_vec(&mut rng, &normal, config.d_patch);
    let background: Vec<Vec<f64>> = (0..N_BACKGROUND)
        .map(|_| gaussian_vec(&mut rng, &normal, config.d_patch))
        .collect();
    // Gaussian square-ish maps are full rank with probability one.
    let scale = 1.0 / (config.d_patch as f64).sqrt();
    let text_map = Tensor::from_fn(config.d_patch, config.d_text, |_, _| scale * normal.sample(&mut rng));
    let map = |v: &[f64]| -> Vec<f64> {
        let row = Tensor::new(1, v.len(), v.to_vec()).expect("non-empty");
        row.matmul(&text_map).expect("matching widths").into_data()
    };
    let tumor_text = map(&tumor_proto);
    let background_text: Vec<Vec<f64>> = background.iter().map(|b| map(b)).collect();

    let event_dist = |z: f64| Exp::new(config.base_hazard * (config.beta * z).exp()).expect("positive rate");
    let censor_dist = (config.censor_hazard > 0.0).then(|| Exp::new(config.censor_hazard).expect("positive rate"));

    let mut cases = Vec::with_capacity(config.n_cases);
    let mut truths = Vec::with_capacity(config.n_cases);
    for i in 0..config.n_cases {
        let id = format!("case-{i:03}");
        let z: f64 = rng.random();
        let n = rng.random_range(config.n_min..=config.n_max);
        let fraction = 0.05 + config.link_slope * z;
        let n_tumor = ((fraction * n as f64).ceil() as usize).clamp(1, n);

        let mut flags: Vec<u8> = (0..n).map(|j| u8::from(j < n_tumor)).collect();
        flags.shuffle(&mut rng);

        // Tumor patches sit in the top-left quadrant of a square grid, the
        // rest in the other three quadrants.
        let half = (n as f64).sqrt().ceil() as i32;
        let mut quadrant: Vec<(i32, i32)> = (0..half).flat_map(|x| (0..half).map(move |y| (x, y))).collect();
        let mut outside: Vec<(i32, i32)> = (0..2 * half)
            .flat_map(|x| (0..2 * half).map(move |y| (x, y)))
            .filter(|&(x, y)| x >= half || y >= half)
            .collect();
        quadrant.shuffle(&mut rng);
        outside.shuffle(&mut rng);
        let (mut qi, mut oi) = (0, 0);

        let mut rows = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        for &flag in &flags {
            if flag == 1 {
                rows.push(noisy(&mut rng, &normal, &tumor_proto, config.noise));
                coords.push(quadrant[qi]);
                qi += 1;
            } else {
                let k = rng.random_range(0..N_BACKGROUND);
                rows.push(noisy(&mut rng, &normal, &background[k], config.noise));
                coords.push(outside[oi]);
                oi += 1;
            }
        }

        let keyword_at = rng.random_range(0..TEXT_TOKENS);
        let mut tokens = Vec::with_capacity(TEXT_TOKENS);
        let mut text_rows = Vec::with_capacity(TEXT_TOKENS);
        for t in 0..TEXT_TOKENS {
            if t == keyword_at {
                tokens.push(KEYWORD.to_string());
                let center: Vec<f64> = tumor_text.iter().map(|v| v * (0.5 + z)).collect();
                text_rows.push(noisy(&mut rng, &normal, &center, config.noise));
            } else {
                tokens.push(FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())].to_string());
                let k = rng.random_range(0..N_BACKGROUND);
                text_rows.push(noisy(&mut rng, &normal, &background_text[k], config.noise));
            }
        }
        let keyword_token_indices = find_keyword_tokens(&tokens, &[KEYWORD.to_string()]).expect("non-empty inputs");
        debug_assert_eq!(keyword_token_indices, vec![keyword_at]);

        let event_time = event_dist(z).sample(&mut rng);
        let censor_time = censor_dist.map_or(f64::INFINITY, |d| d.sample(&mut rng));
        let (time, event) = if event_time <= censor_time {
            (event_time, 1.0)
        } else {
            (censor_time, 0.0)
        };
        let label = SurvivalLabel::new(time.max(1e-9), event)?;

        let patches = FeatureBag::new(Tensor::from_rows(&rows).expect("rectangular"), Some(coords))?;
        let text = FeatureBag::new(Tensor::from_rows(&text_rows).expect("rectangular"), None)?;
        let (patch_file, text_file) = case_paths(&id);
        cases.push(LoadedCase {
            case: Case {
                id: id.clone(),
                patch_file,
                text_file,
                token_strings: tokens,
                keyword_token_indices,
                label,
            },
            text,
            patches,
        });
        truths.push(CaseTruth { id, z, tumor: flags });
    }

    let ids: Vec<String> = cases.iter().map(|c| c.case.id.clone()).collect();
    let trials = make_splits(&ids, config.seed)?;
    let manifest = CohortManifest::new(cases.iter().map(|c| c.case.clone()).collect(), trials);
    Ok(SyntheticCohort {
        cohort: Cohort::from_parts(manifest, cases)?,
        truth: GroundTruth { cases: truths },
    })
}

/// Writes `manifest.toml`, `ground_truth.toml` and `features/*.rasb` under
/// `out_dir` and returns the in-memory cohort.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<SyntheticCohort, SynthError> {
    let synth = generate_cohort(config)?;
    let features = out_dir.join("features");
    fs::create_dir_all(&features).map_err(|source| SynthError::Io { path: features, source })?;
    for c in &synth.cohort.cases {
        write_feature_bag(&c.patches, &out_dir.join(&c.case.patch_file))?;
        write_feature_bag(&c.text, &out_dir.join(&c.case.text_file))?;
    }
    save_manifest(&synth.cohort.manifest, &out_dir.join("manifest.toml"))?;
    synth.cohort.manifest.validate(out_dir)?;
    save_ground_truth(&synth.truth, &out_dir.join("ground_truth.toml"))?;
    Ok(synth)
}
