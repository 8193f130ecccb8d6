use proptest::prelude::*;
use shifcon::numkit::Matrix;
use shifcon::toymodel::{
    forward, forward_batch, forward_with_hooks, generate, init_params, make_parallel_corpus,
    FnHook, LayerHook, ModelConfig, SyntheticCorpusSpec, ToyModelParams, Token, BOS, EOS, PAD,
};
use shifcon::{Error, LangId};

fn model() -> ToyModelParams {
    init_params(&ModelConfig::default(), 3).unwrap()
}

fn small_spec() -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        train_sentences: 120,
        calibration_per_language: 8,
        test_per_language: 8,
        ..Default::default()
    }
}

#[test]
fn corpus_is_deterministic() {
    let a = make_parallel_corpus(&small_spec()).unwrap();
    assert_eq!(a, make_parallel_corpus(&small_spec()).unwrap());
    let other = SyntheticCorpusSpec {
        transition_seed: 99,
        ..small_spec()
    };
    assert_ne!(a.train, make_parallel_corpus(&other).unwrap().train);
}

#[test]
fn training_shares_are_exact() {
    let spec = SyntheticCorpusSpec {
        num_languages: 3,
        data_share: vec![0.8, 0.1, 0.1],
        train_sentences: 10_000,
        calibration_per_language: 2,
        test_per_language: 2,
        ..Default::default()
    };
    let corpus = make_parallel_corpus(&spec).unwrap();
    let counts: Vec<usize> = (0..3).map(|l| corpus.train_indices_of(LangId(l)).len()).collect();
    assert_eq!(counts, vec![8000, 1000, 1000]);
}

#[test]
fn sentences_follow_the_transition_table() {
    let corpus = make_parallel_corpus(&small_spec()).unwrap();
    let all = corpus
        .train
        .iter()
        .map(|s| &s.concepts)
        .chain(&corpus.calibration)
        .chain(&corpus.test);
    for seq in all {
        assert!((corpus.spec.min_sentence_len..=corpus.spec.max_sentence_len).contains(&seq.len()));
        for w in seq.windows(2) {
            assert!(corpus.transitions[w[0] as usize].iter().any(|&(s, _)| s == w[1]));
        }
    }
    for succ in &corpus.transitions {
        assert!((succ.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn corpus_file_round_trip() {
    let corpus = make_parallel_corpus(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.shfc");
    corpus.write(&path).unwrap();
    assert_eq!(shifcon::toymodel::Corpus::read(&path).unwrap(), corpus);
}

#[test]
fn checkpoint_file_round_trip_and_kind_check() {
    let params = model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.shfc");
    params.write(&path).unwrap();
    assert_eq!(ToyModelParams::read(&path).unwrap(), params);
    make_parallel_corpus(&small_spec()).unwrap().write(&path).unwrap();
    assert!(matches!(ToyModelParams::read(&path), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_is_causal(prefix in prop::collection::vec(3u32..259, 1..10), a in 3u32..259, b in 3u32..259) {
        let params = model();
        let mut x = vec![BOS];
        x.extend(&prefix);
        let mut y = x.clone();
        x.push(a);
        y.push(b);
        let (tx, ty) = (forward(&params, &x).unwrap(), forward(&params, &y).unwrap());
        let n = x.len() - 1;
        for layer in 1..=params.config.num_layers {
            prop_assert_eq!(tx.layer(layer).slice_rows(0, n), ty.layer(layer).slice_rows(0, n));
        }
        prop_assert_eq!(tx.logits.slice_rows(0, n), ty.logits.slice_rows(0, n));
    }
}

fn sentence() -> Vec<Token> {
    vec![BOS, 10, 40, 7, 99, 130, EOS]
}

#[test]
fn identity_hook_changes_nothing() {
    let params = model();
    let base = forward(&params, &sentence()).unwrap();
    let hooks = [LayerHook::new(4, FnHook::new("id", |h: &Matrix| h.clone()))];
    let hooked = forward_with_hooks(&params, &sentence(), &hooks).unwrap();
    assert_eq!(hooked.hidden, base.hidden);
    assert_eq!(hooked.logits, base.logits);
    assert_eq!(hooked.interventions.len(), 1);
    assert_eq!(hooked.pre_hook[&4], base.hidden[3]);
}

#[test]
fn hooks_only_affect_later_layers() {
    let params = model();
    let base = forward(&params, &sentence()).unwrap();
    let add = |h: &Matrix| h.add(&Matrix::new(h.rows(), h.cols(), vec![0.5; h.rows() * h.cols()]).unwrap());
    let hooks = [LayerHook::new(5, FnHook::new("add", add))];
    let hooked = forward_with_hooks(&params, &sentence(), &hooks).unwrap();
    for layer in 1..5 {
        assert_eq!(hooked.layer(layer), base.layer(layer));
    }
    assert_eq!(hooked.pre_hook[&5], *base.layer(5));
    let diff = hooked.layer(5).sub(base.layer(5));
    assert!(diff.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    assert_ne!(hooked.layer(6), base.layer(6));
}

#[test]
fn pad_only_sequence_is_finite() {
    let params = model();
    let trace = forward(&params, &[PAD; 5]).unwrap();
    assert!(trace.logits.is_finite());
    assert!(trace.hidden.iter().all(Matrix::is_finite));
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let params = model();
    assert!(forward(&params, &[]).is_err());
    assert!(forward(&params, &[BOS, 10_000]).is_err());
    assert!(forward(&params, &vec![BOS; params.config.max_positions + 1]).is_err());
}

#[test]
fn batch_matches_individual_forwards() {
    let params = model();
    let inputs: Vec<(Vec<Token>, Vec<LayerHook>)> = (0..5)
        .map(|i| ((0..4 + i).map(|t| 3 + (t * 17 + i) as Token % 256).collect(), Vec::new()))
        .collect();
    let batch = forward_batch(&params, &inputs).unwrap();
    for ((tokens, _), trace) in inputs.iter().zip(&batch) {
        assert_eq!(*trace, forward(&params, tokens).unwrap());
    }
}

#[test]
fn generation_is_deterministic_and_bounded() {
    let params = model();
    let prompt = [BOS, 10, 40];
    let a = generate(&params, &prompt, &[], 6).unwrap();
    assert_eq!(a, generate(&params, &prompt, &[], 6).unwrap());
    assert!(!a.is_empty() && a.len() <= 6);
    if let Some(p) = a.iter().position(|&t| t == EOS) {
        assert_eq!(p, a.len() - 1);
    }
    let long = generate(&params, &prompt, &[], 1000).unwrap();
    assert!(prompt.len() + long.len() <= params.config.max_positions);
}

#[test]
fn generation_stops_at_a_forced_eos() {
    let mut params = model();
    params.head_bias[(0, EOS as usize)] = 1e6;
    assert_eq!(generate(&params, &[BOS, 10], &[], 5).unwrap(), vec![EOS]);
}

#[test]
fn swapping_the_head_input_swaps_the_output_language() {
    let scheme = shifcon::toymodel::TokenScheme::new(4, 64).unwrap();
    let (tok_a, tok_b) = (scheme.encode(LangId(0), 5), scheme.encode(LangId(1), 5));
    let mut params = model();
    let d = params.config.hidden_dim;
    params.head = Matrix::zeros(d, params.config.vocab_size);
    params.head[(0, tok_a as usize)] = 1.0;
    params.head[(0, tok_b as usize)] = -1.0;
    params.head_bias = Matrix::zeros(1, params.config.vocab_size);
    params.final_gain = Matrix::new(1, d, vec![1.0; d]).unwrap();
    params.final_bias = Matrix::zeros(1, d);

    let last = params.config.num_layers;
    let pin = |h: &Matrix| {
        let mut out = Matrix::zeros(h.rows(), h.cols());
        (0..h.rows()).for_each(|r| out[(r, 0)] = 1.0);
        out
    };
    let pinned = [LayerHook::new(last, FnHook::new("pin", pin))];
    let swapped = [
        LayerHook::new(last, FnHook::new("pin", pin)),
        LayerHook::new(last, FnHook::new("swap", |h: &Matrix| h.scale(-1.0))),
    ];
    let prompt = [BOS, 10];
    let a = generate(&params, &prompt, &pinned, 1).unwrap();
    let b = generate(&params, &prompt, &swapped, 1).unwrap();
    assert_eq!(scheme.language_of(a[0]), Some(LangId(0)));
    assert_eq!(scheme.language_of(b[0]), Some(LangId(1)));
}
