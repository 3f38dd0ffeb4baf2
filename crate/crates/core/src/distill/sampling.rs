use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::DistillError;
use crate::datamodel::{FeatureBag, LoadedCase, SurvivalLabel};
use crate::numcore::Tensor;
use crate::tff::{forward, TffParams};

/// Mean of the selected `T_proj` rows; an empty selection falls back to the
/// mean of all rows.
pub fn key_text_feature(t_proj: &Tensor, keyword_indices: &[usize]) -> Result<Vec<f64>, DistillError> {
    let all: Vec<usize>;
    let rows = if keyword_indices.is_empty() {
        log::warn!("no keyword tokens selected; averaging all {} text tokens", t_proj.rows());
        all = (0..t_proj.rows()).collect();
        &all
    } else {
        keyword_indices
    };
    let mut key = vec![0.0; t_proj.cols()];
    for &i in rows {
        if i >= t_proj.rows() {
            return Err(DistillError::KeywordIndex {
                index: i,
                tokens: t_proj.rows(),
            });
        }
        for (k, v) in key.iter_mut().zip(t_proj.row(i)) {
            *k += v;
        }
    }
    let n = rows.len() as f64;
    key.iter_mut().for_each(|k| *k /= n);
    Ok(key)
}

/// Result of thresholding patch-to-key cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    /// Ascending row indices of kept patches.
    pub kept: Vec<usize>,
    /// Cosine similarity per patch; 0 for zero-norm rows.
    pub similarity: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Keeps rows whose cosine with `key` is at least `gamma`. If none passes,
/// the single most similar row is kept. Zero-norm rows are never kept.
pub fn sample_patches(patches: &Tensor, key: &[f64], gamma: f64) -> Result<Sampling, DistillError> {
    if key.len() != patches.cols() {
        return Err(DistillError::Width {
            key: key.len(),
            patches: patches.cols(),
        });
    }
    let key_norm = norm(key);
    if key_norm == 0.0 || !key_norm.is_finite() {
        return Err(DistillError::ZeroKey);
    }
    let mut similarity = Vec::with_capacity(patches.rows());
    let mut eligible = Vec::with_capacity(patches.rows());
    for r in 0..patches.rows() {
        let row = patches.row(r);
        let n = norm(row);
        if n == 0.0 {
            similarity.push(0.0);
            eligible.push(false);
            continue;
        }
        let dot: f64 = row.iter().zip(key).map(|(a, b)| a * b).sum();
        similarity.push(dot / (n * key_norm));
        eligible.push(true);
    }
    let zero_rows = eligible.iter().filter(|e| !**e).count();
    if zero_rows > 0 {
        log::warn!("{zero_rows} zero-norm patch rows excluded from sampling");
    }
    let mut kept: Vec<usize> = (0..patches.rows())
        .filter(|&r| eligible[r] && similarity[r] >= gamma)
        .collect();
    if kept.is_empty() {
        let best = (0..patches.rows())
            .filter(|&r| eligible[r])
            .max_by(|&a, &b| similarity[a].total_cmp(&similarity[b]).then(b.cmp(&a)))
            .ok_or(DistillError::AllPatchesZero)?;
        kept.push(best);
    }
    Ok(Sampling { kept, similarity })
}

/// Patch features in the space where they are compared with `T_proj`: the
/// teacher's patch input projection.
pub fn patch_embedding(teacher: &TffParams, patches: &Tensor) -> Result<Tensor, DistillError> {
    let w = teacher.get("patch_proj.weight").expect("layout has patch_proj");
    let b = teacher.get("patch_proj.bias").expect("layout has patch_proj");
    let mut out = patches.matmul(w)?;
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            out.set(r, c, out.get(r, c) + b.get(0, c));
        }
    }
    Ok(out)
}

/// A case reduced to its teacher-selected key patches.
#[derive(Debug, Clone)]
pub struct SampledCase {
    pub id: String,
    pub text: FeatureBag,
    pub keyword_indices: Vec<usize>,
    /// Kept patch rows, in original order.
    pub patches: FeatureBag,
    pub label: SurvivalLabel,
    pub sampling: Sampling,
    /// Teacher `T_proj` for this case's text.
    pub t_proj: Tensor,
    /// Teacher score on the full bags.
    pub teacher_full: f64,
    /// Teacher score on the sampled bags.
    pub teacher_sampled: f64,
}

pub fn sample_case(teacher: &TffParams, case: &LoadedCase, gamma: f64) -> Result<SampledCase, DistillError> {
    let full = forward(teacher, &case.text, &case.patches)?;
    let key = key_text_feature(&full.t_proj, &case.case.keyword_token_indices)?;
    let embedded = patch_embedding(teacher, case.patches.matrix())?;
    let sampling = sample_patches(&embedded, &key, gamma)?;
    let patches = case.patches.select(&sampling.kept)?;
    let teacher_sampled = forward(teacher, &case.text, &patches)?.y;
    Ok(SampledCase {
        id: case.case.id.clone(),
        text: case.text.clone(),
        keyword_indices: case.case.keyword_token_indices.clone(),
        patches,
        label: case.case.label,
        sampling,
        t_proj: full.t_proj,
        teacher_full: full.y,
        teacher_sampled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRecord {
    pub case_id: String,
    pub patch: usize,
    pub x: i32,
    pub y: i32,
    pub similarity: f64,
    /// One flag per requested threshold.
    pub kept: Vec<bool>,
}

/// Per-patch similarity to the case's key text feature and the keep
/// decision at each threshold. Thresholding is applied per `gamma` with the
/// same fallback as [`sample_patches`].
pub fn export_similarity_map(
    case: &LoadedCase,
    teacher: &TffParams,
    gammas: &[f64],
) -> Result<Vec<SimilarityRecord>, DistillError> {
    let coords = case
        .patches
        .coords()
        .ok_or_else(|| DistillError::MissingCoords(case.case.id.clone()))?;
    let t_proj = forward(teacher, &case.text, &case.patches)?.t_proj;
    let key = key_text_feature(&t_proj, &case.case.keyword_token_indices)?;
    let embedded = patch_embedding(teacher, case.patches.matrix())?;
    let samplings = gammas
        .iter()
        .map(|&g| sample_patches(&embedded, &key, g))
        .collect::<Result<Vec<_>, _>>()?;
    let similarity = match samplings.first() {
        Some(s) => s.similarity.clone(),
        None => sample_patches(&embedded, &key, 1.0)?.similarity,
    };
    Ok((0..case.patches.n())
        .map(|j| SimilarityRecord {
            case_id: case.case.id.clone(),
            patch: j,
            x: coords[j].0,
            y: coords[j].1,
            similarity: similarity[j],
            kept: samplings.iter().map(|s| s.kept.binary_search(&j).is_ok()).collect(),
        })
        .collect())
}

/// CSV with one `kept@<gamma>` column per threshold.
pub fn write_similarity_csv(path: &Path, gammas: &[f64], records: &[SimilarityRecord]) -> Result<(), DistillError> {
    let mut out = String::from("case_id,patch,x,y,similarity");
    for g in gammas {
        out.push_str(&format!(",kept@{g}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{},{:.17e}", r.case_id, r.patch, r.x, r.y, r.similarity));
        for &k in &r.kept {
            out.push_str(if k { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    let io = |source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(out.as_bytes()).map_err(io)
}
