use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datamodel::{FeatureBag, SurvivalLabel};
use crate::numcore::Tensor;
use crate::synthgen::{generate_cohort, SynthConfig, SyntheticCohort};
use crate::tff::{forward, init_params, TffConfig};

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn key_feature_is_the_mean_of_selected_rows() {
    let tp = t(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]);
    assert_eq!(key_text_feature(&tp, &[2]).unwrap(), vec![3.0, 3.0]);
    assert_eq!(key_text_feature(&tp, &[0, 1]).unwrap(), vec![0.5, 0.5]);
    let same = t(&[vec![2.0, -1.0], vec![2.0, -1.0]]);
    assert_eq!(key_text_feature(&same, &[0, 1]).unwrap(), vec![2.0, -1.0]);
    assert_eq!(key_text_feature(&tp, &[]).unwrap(), vec![4.0 / 3.0, 4.0 / 3.0]);
    assert!(matches!(
        key_text_feature(&tp, &[3]),
        Err(DistillError::KeywordIndex { index: 3, tokens: 3 })
    ));
}

#[test]
fn threshold_examples() {
    // cosines 0.9 and 0.1 against the key (1, 0)
    let a = [0.9, (1.0f64 - 0.81).sqrt()];
    let b = [0.1, (1.0f64 - 0.01).sqrt()];
    let patches = t(&[a.to_vec(), b.to_vec()]);
    let s = sample_patches(&patches, &[1.0, 0.0], 0.5).unwrap();
    assert_eq!(s.kept, vec![0]);
    assert!((s.similarity[0] - 0.9).abs() < 1e-12);
    assert_eq!(sample_patches(&patches, &[1.0, 0.0], -1.0).unwrap().kept, vec![0, 1]);
    let none = sample_patches(&patches, &[0.0, 1.0], 1.0 + 1e-9).unwrap();
    assert_eq!(none.kept, vec![1]);
}

#[test]
fn zero_rows_and_keys() {
    let patches = t(&[vec![0.0, 0.0], vec![-1.0, 0.0]]);
    let s = sample_patches(&patches, &[1.0, 0.0], -1.0).unwrap();
    assert_eq!(s.kept, vec![1]);
    assert_eq!(s.similarity[0], 0.0);
    // The zero row has the larger similarity but is never the fallback.
    assert_eq!(sample_patches(&patches, &[1.0, 0.0], 0.5).unwrap().kept, vec![1]);
    assert!(matches!(sample_patches(&patches, &[0.0, 0.0], 0.0), Err(DistillError::ZeroKey)));
    let zeros = t(&[vec![0.0, 0.0]]);
    assert!(matches!(
        sample_patches(&zeros, &[1.0, 0.0], 0.0),
        Err(DistillError::AllPatchesZero)
    ));
    assert!(matches!(sample_patches(&zeros, &[1.0], 0.0), Err(DistillError::Width { .. })));
}

proptest! {
    #[test]
    fn kept_sets_shrink_as_gamma_grows(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..20),
        key in prop::collection::vec(-1.0f64..1.0, 3),
        g1 in -1.0f64..1.0,
        g2 in -1.0f64..1.0,
    ) {
        prop_assume!(key.iter().any(|k| k.abs() > 1e-3));
        let patches = t(&rows);
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = sample_patches(&patches, &key, lo).unwrap();
        let b = sample_patches(&patches, &key, hi).unwrap();
        prop_assert!(b.kept.iter().all(|i| a.kept.contains(i)));
        prop_assert!(!b.kept.is_empty());
        prop_assert!(a.kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn median_rule_marks_at_least_half(raw in prop::collection::vec(-5.0f64..5.0, 2..40)) {
        let ids = (0..raw.len()).map(|i| i.to_string()).collect();
        let l = RiskLabeling::from_raw(ids, &raw).unwrap();
        let ones = l.bits.iter().filter(|b| **b).count();
        prop_assert!(ones >= raw.len().div_ceil(2));
        prop_assert!(l.scores.iter().all(|s| *s > 0.0 && *s < 1.0));
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn median_examples() {
    let raw: Vec<f64> = [0.2, 0.6, 0.8, 0.4].iter().map(|&p| logit(p)).collect();
    let ids = (0..4).map(|i| i.to_string()).collect();
    let l = RiskLabeling::from_raw(ids, &raw).unwrap();
    assert!((l.threshold - 0.5).abs() < 1e-12);
    assert_eq!(l.bits, vec![false, true, true, false]);
    let flat = RiskLabeling::from_raw(vec!["a".into(), "b".into(), "c".into()], &[0.3; 3]).unwrap();
    assert_eq!(flat.bits, vec![true; 3]);
    assert!(RiskLabeling::from_raw(vec!["a".into()], &[0.0]).is_err());
}

fn sampled(id: &str, n: usize, offset: f64, label: SurvivalLabel) -> SampledCase {
    let patches = FeatureBag::new(Tensor::from_fn(n, 2, |r, c| offset + (r * 2 + c) as f64), None).unwrap();
    let text = FeatureBag::new(Tensor::filled(3, 2, offset), None).unwrap();
    SampledCase {
        id: id.into(),
        text,
        keyword_indices: vec![1],
        patches,
        label,
        sampling: Sampling {
            kept: (0..n).collect(),
            similarity: vec![1.0; n],
        },
        t_proj: Tensor::zeros(3, 2),
        teacher_full: 0.0,
        teacher_sampled: 0.0,
    }
}

fn pair() -> (SampledCase, SampledCase) {
    (
        sampled("a", 5, 0.0, SurvivalLabel { time: 100.0, event: 1.0 }),
        sampled("b", 7, 100.0, SurvivalLabel { time: 400.0, event: 0.0 }),
    )
}

#[test]
fn mixed_labels_follow_the_weights() {
    let (a, b) = pair();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = mixup(&a, &b, true, true, 0.25, MixConvention::LabelConsistent, &mut rng).unwrap();
    assert_eq!(m.label.event, 0.75);
    assert_eq!(m.label.time, 175.0);
    // ceil(0.75 * 5) + ceil(0.25 * 7)
    assert_eq!(m.patches.n(), 4 + 2);
    assert!(m.augmented);
    let lit = mixup(&a, &b, true, true, 0.25, MixConvention::PatchFraction, &mut rng).unwrap();
    assert_eq!(lit.patches.n(), 2 + 6);
    assert_eq!(lit.label, m.label);
}

#[test]
fn text_comes_from_the_riskier_parent() {
    let (a, b) = pair();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in [0.0, 0.3, 1.0] {
        let m = mixup(&a, &b, true, false, p, MixConvention::LabelConsistent, &mut rng).unwrap();
        assert_eq!(m.text, a.text);
    }
    let m = mixup(&a, &b, false, true, 0.3, MixConvention::LabelConsistent, &mut rng).unwrap();
    assert_eq!(m.text, b.text);
    let m = mixup(&a, &b, false, false, 0.3, MixConvention::LabelConsistent, &mut rng).unwrap();
    assert_eq!(m.text, a.text);
}

#[test]
fn degenerate_weights_reproduce_a_parent() {
    let (a, b) = pair();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = mixup(&a, &b, true, false, 0.0, MixConvention::LabelConsistent, &mut rng).unwrap();
    assert_eq!(m.patches, a.patches);
    assert_eq!(m.text, a.text);
    assert_eq!(m.label, a.label);
    let m = mixup(&a, &b, false, true, 1.0, MixConvention::LabelConsistent, &mut rng).unwrap();
    assert_eq!(m.patches, b.patches);
    assert_eq!(m.text, b.text);
    assert_eq!(m.label, b.label);
    assert!(matches!(
        mixup(&a, &b, true, true, 1.5, MixConvention::LabelConsistent, &mut rng),
        Err(DistillError::PMix(_))
    ));
}

proptest! {
    #[test]
    fn mixed_counts_match_the_convention(p in 0.0f64..=1.0, na in 1usize..12, nb in 1usize..12, seed: u64) {
        let a = sampled("a", na, 0.0, SurvivalLabel { time: 3.0, event: 1.0 });
        let b = sampled("b", nb, 50.0, SurvivalLabel { time: 9.0, event: 0.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = mixup(&a, &b, true, true, p, MixConvention::LabelConsistent, &mut rng).unwrap();
        let from_a = m.patches.matrix().data().chunks(2).filter(|r| r[0] < 50.0).count();
        prop_assert_eq!(from_a, ((1.0 - p) * na as f64).ceil() as usize);
        prop_assert_eq!(m.patches.n() - from_a, (p * nb as f64).ceil() as usize);
        prop_assert!((0.0..=1.0).contains(&m.label.event));
        prop_assert!(m.label.time > 0.0);
    }
}

fn tiny_cohort(seed: u64) -> SyntheticCohort {
    generate_cohort(&SynthConfig {
        n_cases: 30,
        d_patch: 6,
        d_text: 5,
        n_min: 4,
        n_max: 8,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs: 3,
        batch_size: 4,
        seed,
        model: TffConfig {
            d_text_in: 5,
            d_patch_in: 6,
            d_model: 8,
            n_heads: 2,
            n_qformer_blocks: 1,
            n_self_blocks: 1,
            ff_multiplier: 2,
            seed,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn config_validation_lists_all_issues() {
    let cfg = TrainConfig {
        gamma: 1.5,
        p_aug: -0.1,
        lambda: -1.0,
        batch_size: 1,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.issues().len(), 4);
}

#[test]
fn teacher_training_is_deterministic() {
    let s = tiny_cohort(1);
    let a = train_teacher(&s.cohort, 0, &tiny_config(4)).unwrap();
    let b = train_teacher(&s.cohort, 0, &tiny_config(4)).unwrap();
    assert!(a.params.bitwise_eq(&b.params));
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 3);
}

#[test]
fn one_epoch_lowers_training_loss() {
    let s = tiny_cohort(2);
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_config(2)
    };
    let train = s.cohort.trial(0).unwrap().train.clone();
    let labels: Vec<SurvivalLabel> = train.iter().map(|id| s.cohort.get(id).unwrap().case.label).collect();
    let loss = |p: &crate::tff::TffParams| {
        let y = predict_split(p, &s.cohort, &train, Inputs::Full).unwrap();
        crate::survstats::cox_loss_value(&y, &labels).unwrap()
    };
    let before = loss(&init_params(&cfg.model).unwrap());
    let out = train_teacher(&s.cohort, 0, &cfg).unwrap();
    assert!(loss(&out.params) < before);
}

#[test]
fn disabled_augmentation_and_distillation_match_plain_training() {
    let s = tiny_cohort(3);
    let cfg = tiny_config(5);
    let teacher = train_teacher(&s.cohort, 1, &cfg).unwrap().params;
    let off = TrainConfig {
        p_aug: 0.0,
        lambda: 0.0,
        ..cfg.clone()
    };
    let student = train_student(&s.cohort, 1, &teacher, &off).unwrap();
    let plain = train_sampled(&s.cohort, 1, &teacher, &off).unwrap();
    assert!(student.params.bitwise_eq(&plain.params));
    assert_eq!(
        student.log.iter().map(|r| r.train_loss).collect::<Vec<_>>(),
        plain.log.iter().map(|r| r.train_loss).collect::<Vec<_>>()
    );
}

#[test]
fn distillation_ignores_augmented_slots() {
    let s = tiny_cohort(4);
    let cfg = tiny_config(6);
    let teacher = train_teacher(&s.cohort, 2, &cfg).unwrap().params;
    let all_mixed = |lambda| TrainConfig {
        p_aug: 1.0,
        lambda,
        ..cfg.clone()
    };
    let with_kl = train_student(&s.cohort, 2, &teacher, &all_mixed(0.5)).unwrap();
    let without = train_student(&s.cohort, 2, &teacher, &all_mixed(0.0)).unwrap();
    assert!(with_kl.params.bitwise_eq(&without.params));
    let n_train = s.cohort.trial(2).unwrap().train.len();
    assert!(with_kl.log.iter().all(|r| r.augmented_slots == n_train));
    // With some slots left unmixed the term does matter.
    let partly = train_student(&s.cohort, 2, &teacher, &TrainConfig { p_aug: 0.5, lambda: 0.5, ..cfg.clone() }).unwrap();
    let partly_off = train_student(&s.cohort, 2, &teacher, &TrainConfig { p_aug: 0.5, lambda: 0.0, ..cfg }).unwrap();
    assert!(!partly.params.bitwise_eq(&partly_off.params));
}

#[test]
fn warm_started_student_has_zero_distillation_gap() {
    let s = tiny_cohort(5);
    let cfg = tiny_config(7);
    let teacher = train_teacher(&s.cohort, 0, &cfg).unwrap().params;
    for c in &s.cohort.cases[..5] {
        let sc = sample_case(&teacher, c, cfg.gamma).unwrap();
        // the student starts as a copy of the teacher
        let student = teacher.clone();
        let y = forward(&student, &sc.text, &sc.patches).unwrap().y;
        assert_eq!(crate::survstats::bernoulli_kl(y, sc.teacher_sampled), 0.0);
    }
}

#[test]
fn sampling_uses_the_teacher_projection_verbatim() {
    let s = tiny_cohort(6);
    let teacher = init_params(&tiny_config(8).model).unwrap();
    for c in &s.cohort.cases[..5] {
        let sc = sample_case(&teacher, c, 0.5).unwrap();
        let full = forward(&teacher, &c.text, &c.patches).unwrap();
        assert!(sc.t_proj.bitwise_eq(&full.t_proj));
        let key = key_text_feature(&full.t_proj, &c.case.keyword_token_indices).unwrap();
        let again = sample_patches(&patch_embedding(&teacher, c.patches.matrix()).unwrap(), &key, 0.5).unwrap();
        assert_eq!(again, sc.sampling);
        assert_eq!(sc.patches.n(), sc.sampling.kept.len());
    }
}

#[test]
fn label_risk_matches_teacher_scores() {
    let s = tiny_cohort(7);
    let teacher = init_params(&tiny_config(9).model).unwrap();
    let a = label_risk(&teacher, &s.cohort.cases).unwrap();
    let b = label_risk(&teacher, &s.cohort.cases).unwrap();
    assert_eq!(a, b);
    assert!(a.bits.iter().filter(|b| **b).count() >= 15);
}

#[test]
fn similarity_maps() {
    let s = tiny_cohort(8);
    let teacher = init_params(&tiny_config(10).model).unwrap();
    let case = &s.cohort.cases[0];
    let all = export_similarity_map(case, &teacher, &[-1.0]).unwrap();
    assert_eq!(all.len(), case.patches.n());
    assert!(all.iter().all(|r| r.kept == vec![true]));
    let gammas = [-1.0, 0.25, 0.5, 0.75];
    let recs = export_similarity_map(case, &teacher, &gammas).unwrap();
    for r in &recs {
        for w in r.kept.windows(2) {
            assert!(w[0] || !w[1], "kept at a higher threshold but not a lower one");
        }
        assert_eq!((r.x, r.y), case.patches.coords().unwrap()[r.patch]);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.csv");
    write_similarity_csv(&path, &gammas, &recs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("case_id,patch,x,y,similarity,kept@-1,kept@0.25,kept@0.5,kept@0.75\n"));
    assert_eq!(text.lines().count(), recs.len() + 1);

    let mut bare = case.clone();
    bare.patches = FeatureBag::new(case.patches.matrix().clone(), None).unwrap();
    assert!(matches!(
        export_similarity_map(&bare, &teacher, &[0.5]),
        Err(DistillError::MissingCoords(_))
    ));
}
