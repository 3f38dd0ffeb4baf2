use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::Serialize;

use super::{mixup, sample_case, DistillError, PMixDist, RiskLabeling, SampledCase, TrainConfig};
use crate::datamodel::{Cohort, SurvivalLabel};
use crate::numcore::{adam_step, AdamState, Tape, Tensor, Var};
use crate::survstats::{concordance_index, cox_loss, kl_loss, RiskSetView, SurvError};
use crate::tff::{forward_on_tape, forward_tensors, init_params, BoundParams, TffParams};

/// How model inputs are built from a case.
#[derive(Clone, Copy)]
pub enum Inputs<'a> {
    /// Full text and patch bags.
    Full,
    /// Patches reduced by the teacher's text-guided sampler.
    Sampled { teacher: &'a TffParams, gamma: f64 },
}

#[derive(Debug, Clone)]
struct Example {
    text: Tensor,
    patches: Tensor,
    label: SurvivalLabel,
}

fn examples(cohort: &Cohort, ids: &[String], inputs: Inputs<'_>) -> Result<Vec<Example>, DistillError> {
    cohort
        .positions(ids)?
        .into_iter()
        .map(|p| {
            let case = &cohort.cases[p];
            let patches = match inputs {
                Inputs::Full => case.patches.matrix().clone(),
                Inputs::Sampled { teacher, gamma } => sample_case(teacher, case, gamma)?.patches.matrix().clone(),
            };
            Ok(Example {
                text: case.text.matrix().clone(),
                patches,
                label: case.case.label,
            })
        })
        .collect()
}

fn predict(params: &TffParams, examples: &[Example]) -> Result<Vec<f64>, DistillError> {
    examples
        .iter()
        .map(|e| Ok(forward_tensors(params, &e.text, &e.patches)?.y))
        .collect()
}

fn ci_of(params: &TffParams, examples: &[Example]) -> Result<Option<f64>, DistillError> {
    let scores = predict(params, examples)?;
    let labels: Vec<SurvivalLabel> = examples.iter().map(|e| e.label).collect();
    match concordance_index(&scores, &labels) {
        Ok(ci) => Ok(Some(ci)),
        Err(SurvError::Undefined(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Risk scores for the given cases, in order.
pub fn predict_split(
    params: &TffParams,
    cohort: &Cohort,
    ids: &[String],
    inputs: Inputs<'_>,
) -> Result<Vec<f64>, DistillError> {
    predict(params, &examples(cohort, ids, inputs)?)
}

/// Concordance index of the model's scores on the given cases.
pub fn evaluate_split(params: &TffParams, cohort: &Cohort, ids: &[String], inputs: Inputs<'_>) -> Result<f64, DistillError> {
    let scores = predict_split(params, cohort, ids, inputs)?;
    let labels: Vec<SurvivalLabel> = cohort.positions(ids)?.iter().map(|&p| cohort.cases[p].case.label).collect();
    Ok(concordance_index(&scores, &labels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: &'static str,
    pub epoch: usize,
    /// Mean batch loss over the batches that were not skipped.
    pub train_loss: Option<f64>,
    pub val_ci: Option<f64>,
    pub skipped_batches: usize,
    pub augmented_slots: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation CI.
    pub params: TffParams,
    pub best_epoch: usize,
    pub best_val_ci: Option<f64>,
    pub log: Vec<EpochRecord>,
}

pub fn write_log_jsonl(path: &Path, log: &[EpochRecord]) -> Result<(), DistillError> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("plain record"));
        out.push('\n');
    }
    let io = |source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::File::create(path).map_err(io)?.write_all(out.as_bytes()).map_err(io)
}

struct Slot {
    text: Tensor,
    patches: Tensor,
    label: SurvivalLabel,
    /// Teacher score for the KL term; `None` excludes the slot from it.
    teacher_y: Option<f64>,
    augmented: bool,
}

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

fn epoch_rng(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// One optimizer step on a batch. Returns `None` when the batch has no
/// comparable Cox term and was skipped.
fn batch_step(
    params: &mut TffParams,
    adam: &mut AdamState,
    mut slots: Vec<Slot>,
    lambda: f64,
    lr: f64,
) -> Result<Option<f64>, DistillError> {
    slots.sort_by(|a, b| a.label.time.total_cmp(&b.label.time));
    let labels: Vec<SurvivalLabel> = slots.iter().map(|s| s.label).collect();
    let risk = RiskSetView::new(&labels);
    let comparable = (0..labels.len()).any(|i| labels[i].event > 0.0 && risk.risk_set(i).len() > 1);
    if !comparable {
        return Ok(None);
    }
    let (loss_value, grads) = {
        let tape = Tape::new();
        let bound = BoundParams::bind(&tape, params);
        let mut ys = Vec::with_capacity(slots.len());
        for s in &slots {
            let out = forward_on_tape(&bound, tape.constant(s.text.clone()), tape.constant(s.patches.clone()))?;
            ys.push(out.y);
        }
        let mut loss = cox_loss(Var::concat_rows(&ys)?, &labels)?;
        if lambda > 0.0 {
            let mut kl_terms = Vec::new();
            for (s, y) in slots.iter().zip(&ys) {
                if let Some(t) = s.teacher_y {
                    kl_terms.push(kl_loss(*y, t)?);
                }
            }
            if !kl_terms.is_empty() {
                let n = kl_terms.len() as f64;
                let kl = Var::concat_rows(&kl_terms)?.sum()?.scale(lambda / n)?;
                loss = loss.add(kl)?;
            }
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = bound.vars().iter().map(|v| grads.get(*v)).collect();
        (loss.item(), g)
    };
    adam_step(params.tensors_mut(), &grads, adam, lr)?;
    Ok(Some(loss_value))
}

fn fit<F>(
    mut params: TffParams,
    n_train: usize,
    val: &[Example],
    config: &TrainConfig,
    stage: &'static str,
    mut make_slot: F,
) -> Result<TrainOutcome, DistillError>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<Slot, DistillError>,
{
    let mut adam = AdamState::new(params.tensors().iter().map(|t| t.as_ref()));
    let mut best: Option<(f64, usize, TffParams)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut epoch_rng(config.seed, SHUFFLE_STREAM, epoch));
        let mut aug = epoch_rng(config.seed, AUGMENT_STREAM, epoch);
        let (mut total, mut used, mut skipped, mut augmented) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let slots = chunk
                .iter()
                .map(|&i| make_slot(i, &mut aug))
                .collect::<Result<Vec<_>, _>>()?;
            augmented += slots.iter().filter(|s| s.augmented).count();
            match batch_step(&mut params, &mut adam, slots, config.lambda, config.learning_rate)? {
                Some(loss) => {
                    total += loss;
                    used += 1;
                }
                None => {
                    log::info!("{stage} epoch {epoch}: batch without comparable pairs skipped");
                    skipped += 1;
                }
            }
        }
        let val_ci = ci_of(&params, val)?;
        if let Some(ci) = val_ci {
            if best.as_ref().is_none_or(|(b, _, _)| ci > *b) {
                best = Some((ci, epoch, params.clone()));
            }
        }
        let record = EpochRecord {
            stage,
            epoch,
            train_loss: (used > 0).then(|| total / used as f64),
            val_ci,
            skipped_batches: skipped,
            augmented_slots: augmented,
        };
        log::debug!("{}", serde_json::to_string(&record).expect("plain record"));
        log.push(record);
    }
    Ok(match best {
        Some((ci, epoch, p)) => TrainOutcome {
            params: p,
            best_epoch: epoch,
            best_val_ci: Some(ci),
            log,
        },
        None => {
            log::warn!("{stage}: validation CI undefined in every epoch; keeping the final weights");
            TrainOutcome {
                params,
                best_epoch: config.epochs,
                best_val_ci: None,
                log,
            }
        }
    })
}

fn check_trial(cohort: &Cohort, trial: usize) -> Result<(Vec<String>, Vec<String>), DistillError> {
    let split = cohort.trial(trial)?;
    if split.train.len() < 2 {
        return Err(DistillError::TooFewCases {
            needed: 2,
            found: split.train.len(),
        });
    }
    Ok((split.train.clone(), split.val.clone()))
}

/// Stage I: Cox training on full bags from a fresh initialization.
pub fn train_teacher(cohort: &Cohort, trial: usize, config: &TrainConfig) -> Result<TrainOutcome, DistillError> {
    config.validate()?;
    let (train_ids, val_ids) = check_trial(cohort, trial)?;
    let train = examples(cohort, &train_ids, Inputs::Full)?;
    let val = examples(cohort, &val_ids, Inputs::Full)?;
    let init = init_params(&config.model)?;
    fit(init, train.len(), &val, config, "teacher", |i, _| {
        let e = &train[i];
        Ok(Slot {
            text: e.text.clone(),
            patches: e.patches.clone(),
            label: e.label,
            teacher_y: None,
            augmented: false,
        })
    })
}

fn sampled(cohort: &Cohort, ids: &[String], teacher: &TffParams, gamma: f64) -> Result<Vec<SampledCase>, DistillError> {
    cohort
        .positions(ids)?
        .into_iter()
        .map(|p| sample_case(teacher, &cohort.cases[p], gamma))
        .collect()
}

fn as_examples(cases: &[SampledCase]) -> Vec<Example> {
    cases
        .iter()
        .map(|c| Example {
            text: c.text.matrix().clone(),
            patches: c.patches.matrix().clone(),
            label: c.label,
        })
        .collect()
}

/// Cox training on teacher-sampled bags, warm-started from the teacher, with
/// no augmentation and no distillation term.
pub fn train_sampled(
    cohort: &Cohort,
    trial: usize,
    teacher: &TffParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, DistillError> {
    config.validate()?;
    let (train_ids, val_ids) = check_trial(cohort, trial)?;
    let train = as_examples(&sampled(cohort, &train_ids, teacher, config.gamma)?);
    let val = as_examples(&sampled(cohort, &val_ids, teacher, config.gamma)?);
    fit(teacher.clone(), train.len(), &val, config, "sampled", |i, _| {
        let e = &train[i];
        Ok(Slot {
            text: e.text.clone(),
            patches: e.patches.clone(),
            label: e.label,
            teacher_y: None,
            augmented: false,
        })
    })
}

fn draw_p_mix(dist: PMixDist, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        PMixDist::Uniform => rng.random::<f64>(),
        PMixDist::Beta { alpha } => Beta::new(alpha, alpha).expect("validated alpha").sample(rng),
    }
}

/// Stage II: sampled inputs, risk-aware mixup with probability `p_aug` per
/// slot, and `lambda` times the mean teacher KL over non-augmented slots.
pub fn train_student(
    cohort: &Cohort,
    trial: usize,
    teacher: &TffParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, DistillError> {
    config.validate()?;
    let (train_ids, val_ids) = check_trial(cohort, trial)?;
    let train = sampled(cohort, &train_ids, teacher, config.gamma)?;
    let val = as_examples(&sampled(cohort, &val_ids, teacher, config.gamma)?);
    let raw: Vec<f64> = train.iter().map(|c| c.teacher_full).collect();
    let risk = RiskLabeling::from_raw(train_ids.clone(), &raw)?;
    let n = train.len();
    fit(teacher.clone(), n, &val, config, "student", |i, rng| {
        let a = &train[i];
        if config.p_aug > 0.0 && rng.random::<f64>() < config.p_aug {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let b = &train[j];
            let p_mix = draw_p_mix(config.p_mix, rng);
            let mixed = mixup(a, b, risk.bits[i], risk.bits[j], p_mix, config.convention, rng)?;
            return Ok(Slot {
                text: mixed.text.matrix().clone(),
                patches: mixed.patches.matrix().clone(),
                label: mixed.label,
                teacher_y: None,
                augmented: true,
            });
        }
        Ok(Slot {
            text: a.text.matrix().clone(),
            patches: a.patches.matrix().clone(),
            label: a.label,
            teacher_y: Some(a.teacher_sampled),
            augmented: false,
        })
    })
}
