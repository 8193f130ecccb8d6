mod common;

use proptest::prelude::*;
use shifcon::geometry::ShiftArea;
use shifcon::intervention::ShiftPlan;
use shifcon::toymodel::{init_params, make_parallel_corpus, ModelConfig, SyntheticCorpusSpec};
use shifcon::training::{
    calibrate, check_gradient, check_gradient_vec, combined_loss, info_nce, mcl_loss,
    mcl_loss_layer, msft_loss, train_stage1, train_stage2, train_two_stage, CalibrationConfig,
    GradCheckConfig, MclConfig, Sgd, TrainingConfig, TrainingLog, Variant,
};
use shifcon::Error;

use common::*;

fn nested(flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    flat.chunks(flat.len() / n).map(<[f64]>::to_vec).collect()
}

fn pair_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=8, 2usize..8).prop_flat_map(|(n, d)| {
        (
            Just(n),
            Just(d),
            prop::collection::vec(0.1f64..1.0, n * d),
            prop::collection::vec(-1.0f64..1.0, n * d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn info_nce_ignores_embedding_scale((n, _d, a, b) in pair_strategy(), s in 0.1f64..7.0) {
        let (a, b) = (nested(&a, n), nested(&b, n));
        let scaled: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x * s).collect()).collect();
        let (base, _, _) = info_nce(&a, &b, 0.05).unwrap();
        let (other, _, _) = info_nce(&scaled, &b, 0.05).unwrap();
        prop_assert!((base - other).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn info_nce_gradients_match_differences((n, d, a, b) in pair_strategy()) {
        let joint: Vec<f64> = a.iter().chain(&b).copied().collect();
        let split = |x: &[f64]| (nested(&x[..n * d], n), nested(&x[n * d..], n));
        let (na, nb) = split(&joint);
        let (_, ga, gb) = info_nce(&na, &nb, 0.5).unwrap();
        let grad: Vec<f64> = ga.concat().into_iter().chain(gb.concat()).collect();
        let f = |x: &[f64]| {
            let (p, q) = split(x);
            Ok(info_nce(&p, &q, 0.5)?.0)
        };
        let cfg = GradCheckConfig { coordinates: joint.len(), tolerance: 1e-6, ..Default::default() };
        let report = check_gradient_vec(f, &joint, &grad, &cfg).unwrap();
        prop_assert!(report.passed, "{report:?}");
    }

    #[test]
    fn info_nce_is_at_least_zero_and_bounded_by_chance_for_equal_sides((n, _d, a, _b) in pair_strategy()) {
        let a = nested(&a, n);
        let (loss, _, _) = info_nce(&a, &a, 0.05).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(loss <= n as f64 * (n as f64).ln() + 1e-9);
    }
}

#[test]
fn zero_norm_embedding_is_reported() {
    let err = info_nce(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], 0.05).unwrap_err();
    assert!(matches!(err, Error::ZeroNormEmbedding { index: 0 }));
}

#[test]
fn zero_alpha_is_exactly_msft() {
    let f = grad_fixture();
    let mcl = MclConfig { layers: vec![3, 4], ..Default::default() };
    let msft = msft_loss(&f.params, &f.batch, Some(&f.plan)).unwrap();
    let comb = combined_loss(&f.params, &f.batch, &f.pairs, &mcl, 0.0, Some(&f.plan)).unwrap();
    assert_eq!(comb.value, msft.value);
    assert_eq!(comb.grads, msft.grads);
    assert!(comb.mcl.is_empty());
}

#[test]
fn combined_loss_is_the_weighted_sum_of_its_parts() {
    let f = grad_fixture();
    let mcl = MclConfig { layers: vec![3, 4], ..Default::default() };
    let plan = Some(&f.plan);
    let msft = msft_loss(&f.params, &f.batch, plan).unwrap();
    let parts: Vec<_> = [3, 4]
        .iter()
        .map(|&l| mcl_loss_layer(&f.params, &f.pairs, l, &mcl, plan).unwrap())
        .collect();
    let whole = mcl_loss(&f.params, &f.pairs, &mcl, plan).unwrap();
    assert!((whole.total() - parts.iter().map(|p| p.value).sum::<f64>()).abs() < 1e-12);

    let alpha = 1.7;
    let comb = combined_loss(&f.params, &f.batch, &f.pairs, &mcl, alpha, plan).unwrap();
    assert!((comb.value - (msft.value + alpha * whole.total())).abs() < 1e-12);
    let mut expected = msft.grads.clone();
    for p in &parts {
        expected.axpy(alpha, &p.grads);
    }
    let mut diff = comb.grads.clone();
    diff.axpy(-1.0, &expected);
    assert!(diff.max_abs() <= 1e-10 * expected.max_abs());
}

#[test]
fn unshifted_mcl_gradient_matches_differences() {
    let f = grad_fixture();
    let mcl = MclConfig { layers: vec![2, 6], ..Default::default() };
    let out = mcl_loss(&f.params, &f.pairs, &mcl, None).unwrap();
    let cfg = GradCheckConfig { coordinates: 60, seed: 4, ..Default::default() };
    let report = check_gradient(|p| Ok(mcl_loss(p, &f.pairs, &mcl, None)?.total()), &f.params, &out.grads, &cfg).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn mcl_layer_outside_configuration_is_rejected() {
    let f = grad_fixture();
    let mcl = MclConfig { layers: vec![3, 4], ..Default::default() };
    assert!(mcl_loss_layer(&f.params, &f.pairs, 6, &mcl, None).is_err());
    let bad = MclConfig { layers: vec![9], ..Default::default() };
    assert!(matches!(mcl_loss(&f.params, &f.pairs, &bad, None), Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn clipping_caps_the_step_length() {
    let f = grad_fixture();
    let grads = msft_loss(&f.params, &f.batch, None).unwrap().grads;
    let mut big = grads.clone();
    big.scale_in_place(1e3 / grads.l2_norm());
    let mut params = f.params.clone();
    Sgd::new(1.0, 0.0).with_max_grad_norm(0.5).step(&mut params, &big);
    let mut moved = params.clone();
    moved.axpy(-1.0, &f.params);
    assert!((moved.l2_norm() - 0.5).abs() < 1e-9);
}

fn small_corpus() -> shifcon::toymodel::Corpus {
    make_parallel_corpus(&SyntheticCorpusSpec {
        train_sentences: 120,
        calibration_per_language: 40,
        test_per_language: 4,
        ..Default::default()
    })
    .unwrap()
}

fn short_training() -> TrainingConfig {
    TrainingConfig {
        stage1_steps: 4,
        stage2_steps: 3,
        batch_size: 4,
        mcl_batch_size: 4,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = small_corpus();
    let init = init_params(&ModelConfig::default(), 2).unwrap();
    let run = || {
        train_two_stage(init.clone(), &corpus, &short_training(), &CalibrationConfig::default(), 8, Variant::ShifCon)
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.log.records.len(), 7);
    assert!(a.log.records[4..].iter().all(|r| r.stage == 2 && !r.vector_checksums.is_empty()));
}

#[test]
fn zero_stage2_steps_leave_the_model_alone() {
    let corpus = small_corpus();
    let mut params = init_params(&ModelConfig::default(), 2).unwrap();
    let cfg = TrainingConfig { stage2_steps: 0, ..short_training() };
    let mut log = TrainingLog::default();
    train_stage1(&mut params, &corpus, &cfg, 1, &mut log).unwrap();
    let cal = calibrate(&params, &corpus, &CalibrationConfig::default(), "t").unwrap();
    let plan = cal.plan(corpus.spec.dominant_language).unwrap();
    let before = params.clone();
    let after_plan = train_stage2(&mut params, &corpus, &cfg, 1, Variant::ShifCon, plan.clone(), &mut log).unwrap();
    assert_eq!(params, before);
    assert_eq!(after_plan, plan);
}

#[test]
fn variants_without_shift_keep_the_vectors() {
    let corpus = small_corpus();
    let mut params = init_params(&ModelConfig::default(), 2).unwrap();
    let table = vector_table(4, 8, 32);
    let plan = ShiftPlan::new(corpus.spec.dominant_language, ShiftArea::manual(3, 5, 8).unwrap(), table, true).unwrap();
    let mut log = TrainingLog::default();
    let out = train_stage2(&mut params, &corpus, &short_training(), 1, Variant::NoShift, plan.clone(), &mut log).unwrap();
    assert!(!out.is_enabled());
    assert_eq!(out.vectors(), plan.vectors());
    assert!(log.records.iter().all(|r| r.vector_checksums.is_empty() && r.mcl.len() == 2));
}

#[test]
fn invalid_training_config_is_a_config_error() {
    let bad = TrainingConfig { momentum: 1.0, ..Default::default() };
    assert!(bad.validate().unwrap_err().is_config());
    let bad = TrainingConfig { alpha: -1.0, ..Default::default() };
    assert!(bad.validate().unwrap_err().is_config());
}

#[test]
fn rescaling_one_embedding_by_seven_keeps_the_loss() {
    let mut rng = rng(12);
    for n in 1..=8 {
        let a: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, 6)).collect();
        let b: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, 6)).collect();
        let (base, _, _) = info_nce(&a, &b, 0.05).unwrap();
        let mut scaled = b.clone();
        scaled[n - 1].iter_mut().for_each(|x| *x *= 7.0);
        let (other, _, _) = info_nce(&a, &scaled, 0.05).unwrap();
        assert!((base - other).abs() <= 1e-12, "n = {n}: {base} vs {other}");
    }
}

#[test]
fn language_vectors_receive_no_gradient() {
    let f = grad_fixture();
    let mcl = MclConfig { layers: vec![3, 4], ..Default::default() };
    let base = combined_loss(&f.params, &f.batch, &f.pairs, &mcl, 1.0, Some(&f.plan)).unwrap();
    let mut moved = f.plan.clone();
    let v: Vec<f64> = moved.vectors().get(shifcon::LangId(2), 3).unwrap().iter().map(|x| x + 0.5).collect();
    moved.set_vector(shifcon::LangId(2), 3, v).unwrap();
    let other = combined_loss(&f.params, &f.batch, &f.pairs, &mcl, 1.0, Some(&moved)).unwrap();
    assert_ne!(base.value, other.value);
    assert_eq!(base.grads.num_parameters(), f.params.num_parameters());
    assert_eq!(
        base.grads.named_tensors().iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        f.params.named_tensors().iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()
    );
}
