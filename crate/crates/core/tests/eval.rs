use proptest::prelude::*;
use shifcon::eval::{evaluate, generations, is_consistent, language_consistency, next_token_accuracy, EvalConfig};
use shifcon::geometry::ShiftArea;
use shifcon::toymodel::{init_params, make_parallel_corpus, Corpus, ModelConfig, SyntheticCorpusSpec, ToyModelParams, TokenScheme, EOS};
use shifcon::training::{CalibrationConfig, Variant};
use shifcon::LangId;

fn corpus() -> Corpus {
    make_parallel_corpus(&SyntheticCorpusSpec {
        train_sentences: 40,
        calibration_per_language: 40,
        test_per_language: 10,
        ..Default::default()
    })
    .unwrap()
}

fn eos_model() -> ToyModelParams {
    let mut params = init_params(&ModelConfig::default(), 4).unwrap();
    params.head_bias[(0, EOS as usize)] = 1e6;
    params
}

#[test]
fn eos_only_model_scores_only_the_final_position() {
    let corpus = corpus();
    let params = eos_model();
    let positions: usize = corpus.test.iter().map(|c| c.len() + 1).sum();
    let expected = corpus.test.len() as f64 / positions as f64;
    let acc = next_token_accuracy(&params, &corpus, &corpus.test, LangId(1), None).unwrap();
    assert!((acc - expected).abs() < 1e-15);
}

#[test]
fn eos_only_model_is_never_consistent() {
    let corpus = corpus();
    let params = eos_model();
    let cfg = EvalConfig::default();
    let gens = generations(&params, &corpus, &corpus.test, LangId(2), None, &cfg).unwrap();
    assert!(gens.iter().all(|g| g == &[EOS]));
    let langs = vec![LangId(2); gens.len()];
    let c = language_consistency(&gens, &langs, &corpus.scheme, 0.9).unwrap();
    assert_eq!(c[&LangId(2)], 0.0);
}

#[test]
fn report_covers_every_language() {
    let corpus = corpus();
    let params = init_params(&ModelConfig::default(), 4).unwrap();
    let area = ShiftArea::manual(3, 5, 8).unwrap();
    let report = evaluate(&params, &corpus, Variant::MsftOnly, None, &area, &CalibrationConfig::default(), &EvalConfig::default())
        .unwrap();
    assert_eq!(report.accuracy.len(), 4);
    assert_eq!(report.area_distance.per_language.len(), 3);
    assert!(report.area_distance.per_language.values().all(|d| d.len() == 3 && d.iter().all(|x| x.is_finite())));
    assert!((0.0..=1.0).contains(&report.non_dominant_accuracy));
    assert!((0.0..=1.0).contains(&report.non_dominant_consistency));
    assert!(!report.shift && !report.mcl);
}

proptest! {
    #[test]
    fn consistency_matches_a_direct_count(langs in prop::collection::vec(0u16..3, 1..12), threshold in 0.05f64..=1.0) {
        let scheme = TokenScheme::new(3, 5).unwrap();
        let tokens: Vec<_> = langs.iter().map(|&l| scheme.encode(LangId(l), 1)).chain([EOS]).collect();
        let share = langs.iter().filter(|&&l| l == 0).count() as f64 / langs.len() as f64;
        prop_assert_eq!(is_consistent(&tokens, LangId(0), &scheme, threshold), share >= threshold - 1e-12);
    }
}
