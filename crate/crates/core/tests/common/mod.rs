#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shifcon::geometry::{LanguageSubspace, LanguageVectorTable, ShiftArea};
use shifcon::intervention::ShiftPlan;
use shifcon::numkit::{svd, Matrix};
use shifcon::pipeline::PipelineConfig;
use shifcon::toymodel::{init_params, make_parallel_corpus, ModelConfig, SyntheticCorpusSpec, ToyModelParams};
use shifcon::training::{Sample, TranslationPair, TranslationPairBatch};
use shifcon::LangId;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `Q diag(λ) Qᵀ` with `λ` log-uniform in `[1, cond]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, cond: f64) -> Matrix {
    let q = random_orthogonal(rng, d);
    let lambdas: Vec<f64> = (0..d).map(|_| cond.powf(rng.random_range(0.0..1.0))).collect();
    q.matmul(&Matrix::from_diag(&lambdas)).matmul_t(&q).symmetrized()
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    svd(&random_matrix(rng, d, d)).unwrap().u
}

/// `U diag(s) Vᵀ` with singular values spanning exactly `[1, cond]`.
pub fn matrix_with_condition(rng: &mut ChaCha8Rng, d: usize, cond: f64) -> Matrix {
    let (u, v) = (random_orthogonal(rng, d), random_orthogonal(rng, d));
    let s: Vec<f64> = (0..d)
        .map(|i| if d == 1 { 1.0 } else { cond.powf(i as f64 / (d - 1) as f64) })
        .collect();
    u.matmul(&Matrix::from_diag(&s)).matmul_t(&v)
}

pub fn subspace(mean: Vec<f64>, k: Matrix) -> LanguageSubspace {
    LanguageSubspace::from_parts(mean, k, 100).unwrap()
}

pub fn vector_table(languages: u16, layers: usize, d: usize) -> LanguageVectorTable {
    let mut vecs = BTreeMap::new();
    for l in 0..languages {
        let per_layer = (0..layers)
            .map(|i| (0..d).map(|k| ((l as usize * 31 + i * 7 + k) as f64).sin() * 0.3).collect())
            .collect();
        vecs.insert(LangId(l), per_layer);
    }
    LanguageVectorTable::from_vectors(vecs).unwrap()
}

/// A model at initialization with a few MSFT samples, MCL pairs in language 2 and a
/// plan shifting layers 3..5.
pub struct GradFixture {
    pub params: ToyModelParams,
    pub batch: Vec<Sample>,
    pub pairs: TranslationPairBatch,
    pub plan: ShiftPlan,
}

pub fn grad_fixture() -> GradFixture {
    let spec = SyntheticCorpusSpec {
        train_sentences: 200,
        ..Default::default()
    };
    let corpus = make_parallel_corpus(&spec).unwrap();
    let config = ModelConfig::default();
    let params = init_params(&config, 11).unwrap();
    let batch = corpus.train[..4]
        .iter()
        .map(|s| Sample {
            language: s.language,
            tokens: corpus.framed(s.language, &s.concepts),
        })
        .collect();
    let pairs = corpus.test[..4]
        .iter()
        .map(|c| TranslationPair {
            language: LangId(2),
            non_dominant: corpus.framed(LangId(2), c),
            dominant: corpus.framed(LangId(0), c),
        })
        .collect();
    let pairs = TranslationPairBatch::new(pairs, &corpus.scheme).unwrap();
    let table = vector_table(4, config.num_layers, config.hidden_dim);
    let area = ShiftArea::manual(3, 5, config.num_layers).unwrap();
    let plan = ShiftPlan::new(LangId(0), area, table, true).unwrap();
    GradFixture {
        params,
        batch,
        pairs,
        plan,
    }
}

/// A configuration small enough to run the whole pipeline in seconds.
pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.train_sentences = 160;
    cfg.corpus.calibration_per_language = 40;
    cfg.corpus.test_per_language = 12;
    cfg.training.stage1_steps = 30;
    cfg.training.stage2_steps = 12;
    cfg.training.batch_size = 8;
    cfg.training.mcl_batch_size = 4;
    cfg
}
