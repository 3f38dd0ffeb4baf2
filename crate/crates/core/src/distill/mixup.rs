use rand::seq::index;
use rand::Rng;

use super::{DistillError, MixConvention, SampledCase};
use crate::datamodel::{FeatureBag, SurvivalLabel};

/// An augmented training example built from two sampled parents.
#[derive(Debug, Clone)]
pub struct MixedSample {
    pub patches: FeatureBag,
    pub text: FeatureBag,
    pub keyword_indices: Vec<usize>,
    pub label: SurvivalLabel,
    pub parents: (String, String),
    pub p_mix: f64,
    pub augmented: bool,
}

fn pick<R: Rng>(rng: &mut R, bag: &FeatureBag, count: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, bag.n(), count.min(bag.n())).into_vec();
    idx.sort_unstable();
    idx
}

/// Risk-aware mixup of two sampled cases with risk bits `r_a`, `r_b`.
pub fn mixup<R: Rng>(
    a: &SampledCase,
    b: &SampledCase,
    r_a: bool,
    r_b: bool,
    p_mix: f64,
    convention: MixConvention,
    rng: &mut R,
) -> Result<MixedSample, DistillError> {
    if !(0.0..=1.0).contains(&p_mix) {
        return Err(DistillError::PMix(p_mix));
    }
    if a.patches.n() == 0 || b.patches.n() == 0 {
        return Err(DistillError::EmptyMix);
    }
    let text_from_b = r_b && !r_a;
    let (text, keyword_indices) = if text_from_b {
        (b.text.clone(), b.keyword_indices.clone())
    } else {
        (a.text.clone(), a.keyword_indices.clone())
    };

    let (share_a, share_b) = match convention {
        MixConvention::LabelConsistent => (1.0 - p_mix, p_mix),
        MixConvention::PatchFraction => (p_mix, 1.0 - p_mix),
    };
    let n_a = (share_a * a.patches.n() as f64).ceil() as usize;
    let n_b = (share_b * b.patches.n() as f64).ceil() as usize;
    let from_a = pick(rng, &a.patches, n_a);
    let from_b = pick(rng, &b.patches, n_b);
    let mut parts = Vec::with_capacity(2);
    let sel_a;
    let sel_b;
    if !from_a.is_empty() {
        sel_a = a.patches.select(&from_a)?;
        parts.push(&sel_a);
    }
    if !from_b.is_empty() {
        sel_b = b.patches.select(&from_b)?;
        parts.push(&sel_b);
    }
    let patches = FeatureBag::concat(&parts)?;

    let label = SurvivalLabel {
        time: (1.0 - p_mix) * a.label.time + p_mix * b.label.time,
        event: (1.0 - p_mix) * a.label.event + p_mix * b.label.event,
    };
    Ok(MixedSample {
        patches,
        text,
        keyword_indices,
        label,
        parents: (a.id.clone(), b.id.clone()),
        p_mix,
        augmented: true,
    })
}
