//! SGD and the two-stage training driver.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate, Calibration, CalibrationConfig};
use super::derive_seed;
use super::losses::{combined_loss, content_range, MclConfig, Sample, TranslationPair, TranslationPairBatch};
use crate::error::{Error, Result};
use crate::geometry::{OnlineVectorEstimator, UpdateWeights};
use crate::intervention::ShiftPlan;
use crate::lang::LangId;
use crate::repstore::{pool_rows, PoolingMethod};
use crate::toymodel::{forward_cached, Corpus, ToyModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale the gradient to this global L2 norm when it is larger; 0 disables.
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub mcl_batch_size: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub temperature: f64,
    pub pooling: PoolingMethod,
    /// Draw each MCL pair's language independently instead of one language per batch.
    pub mix_mcl_languages: bool,
    pub update_weights: UpdateWeights,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            learning_rate: 0.05,
            momentum: 0.9,
            max_grad_norm: 1.0,
            batch_size: 16,
            mcl_batch_size: 8,
            stage1_steps: 1500,
            stage2_steps: 2000,
            temperature: super::losses::DEFAULT_TEMPERATURE,
            pooling: PoolingMethod::Mean,
            mix_mcl_languages: false,
            update_weights: UpdateWeights::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return bad(format!("invalid max_grad_norm {}", self.max_grad_norm));
        }
        if self.batch_size == 0 || self.mcl_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.stage1_steps == 0 {
            return bad("stage 1 needs at least one step".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Stage-2 configurations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Stage 2 continues with the autoregressive loss only.
    MsftOnly,
    /// Shift hooks and MCL.
    #[serde(rename = "shifcon")]
    ShifCon,
    /// MCL on unshifted representations, no hooks.
    NoShift,
    /// Shift hooks, no MCL.
    NoMcl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::MsftOnly, Variant::ShifCon, Variant::NoShift, Variant::NoMcl];

    pub fn uses_shift(self) -> bool {
        matches!(self, Variant::ShifCon | Variant::NoMcl)
    }

    pub fn uses_mcl(self) -> bool {
        matches!(self, Variant::ShifCon | Variant::NoShift)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::MsftOnly => "msft_only",
            Variant::ShifCon => "shifcon",
            Variant::NoShift => "no_shift",
            Variant::NoMcl => "no_mcl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// SGD with optional heavy-ball momentum: `v ← μv + g`, `θ ← θ − ηv`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_grad_norm: f64,
    velocity: Option<ToyModelParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            max_grad_norm: 0.0,
            velocity: None,
        }
    }

    pub fn with_max_grad_norm(mut self, max_grad_norm: f64) -> Self {
        self.max_grad_norm = max_grad_norm;
        self
    }

    pub fn step(&mut self, params: &mut ToyModelParams, grads: &ToyModelParams) {
        if self.learning_rate == 0.0 {
            return;
        }
        let norm = grads.l2_norm();
        if self.max_grad_norm > 0.0 && norm > self.max_grad_norm {
            let mut clipped = grads.clone();
            clipped.scale_in_place(self.max_grad_norm / norm);
            return self.apply(params, &clipped);
        }
        self.apply(params, grads);
    }

    fn apply(&mut self, params: &mut ToyModelParams, grads: &ToyModelParams) {
        if self.momentum == 0.0 {
            params.axpy(-self.learning_rate, grads);
            return;
        }
        let v = self.velocity.get_or_insert_with(|| params.zeros_like());
        v.scale_in_place(self.momentum);
        v.axpy(1.0, grads);
        params.axpy(-self.learning_rate, v);
    }
}

/// Reshuffles the index set every epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(indices: Vec<usize>, seed: u64) -> Self {
        let mut s = Self {
            order: indices,
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    fn batch(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub stage: u8,
    pub variant: Variant,
    pub step: usize,
    pub msft: f64,
    /// Layer → MCL loss.
    pub mcl: BTreeMap<usize, f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcl_language: Option<LangId>,
    /// Language → checksum of its current vectors (stage 2 with hooks only).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub vector_checksums: BTreeMap<LangId, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn last_total(&self, stage: u8) -> Option<f64> {
        self.records.iter().rev().find(|r| r.stage == stage).map(|r| r.total)
    }
}

fn sample_of(corpus: &Corpus, i: usize) -> Sample {
    let s = &corpus.train[i];
    Sample {
        language: s.language,
        tokens: corpus.framed(s.language, &s.concepts),
    }
}

fn check_corpus(corpus: &Corpus) -> Result<()> {
    let present: std::collections::BTreeSet<LangId> = corpus.train.iter().map(|s| s.language).collect();
    if present.len() < 2 {
        return Err(Error::Config(format!(
            "training split covers {} language(s); need at least 2",
            present.len()
        )));
    }
    Ok(())
}

/// Stage 1: autoregressive loss only, no hooks.
pub fn train_stage1(
    params: &mut ToyModelParams,
    corpus: &Corpus,
    cfg: &TrainingConfig,
    seed: u64,
    log: &mut TrainingLog,
) -> Result<()> {
    cfg.validate()?;
    check_corpus(corpus)?;
    let mut sampler = EpochSampler::new((0..corpus.train.len()).collect(), derive_seed(seed, "stage1/sampler"));
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum).with_max_grad_norm(cfg.max_grad_norm);
    for step in 0..cfg.stage1_steps {
        let batch: Vec<Sample> = sampler.batch(cfg.batch_size).into_iter().map(|i| sample_of(corpus, i)).collect();
        let out = super::losses::msft_loss(params, &batch, None)?;
        opt.step(params, &out.grads);
        log.records.push(LogRecord {
            stage: 1,
            variant: Variant::MsftOnly,
            step,
            msft: out.value,
            mcl: BTreeMap::new(),
            total: out.value,
            mcl_language: None,
            vector_checksums: BTreeMap::new(),
        });
    }
    if !params.is_finite() {
        return Err(Error::Numerical("stage 1 produced non-finite parameters".into()));
    }
    Ok(())
}

/// Pooled means at the given layers of unhooked forwards, per language in `groups`.
fn batch_means(
    params: &ToyModelParams,
    groups: &BTreeMap<LangId, Vec<Vec<u32>>>,
    corpus: &Corpus,
    layers: [usize; 2],
    pooling: PoolingMethod,
) -> Result<BTreeMap<(LangId, usize), Vec<f64>>> {
    let depth = layers[1];
    let mut out = BTreeMap::new();
    for (&lang, seqs) in groups {
        let pooled: Vec<[Vec<f64>; 2]> = seqs
            .par_iter()
            .map(|c| -> Result<[Vec<f64>; 2]> {
                let tokens = corpus.framed(lang, c);
                let (s, e) = content_range(&tokens)?;
                let (trace, _) = forward_cached(params, &tokens, &[], depth)?;
                Ok(layers.map(|l| pool_rows(trace.layer(l), s, e, pooling)))
            })
            .collect::<Result<_>>()?;
        for (k, &layer) in layers.iter().enumerate() {
            let d = pooled[0][k].len();
            let mut mean = vec![0.0; d];
            for p in &pooled {
                for (m, v) in mean.iter_mut().zip(&p[k]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= pooled.len() as f64);
            out.insert((lang, layer), mean);
        }
    }
    Ok(out)
}

/// Stage 2 from a stage-1 model and its calibrated plan.
///
/// Variants with shifting train with the plan's hooks and keep the vectors of `L_to` and
/// `L_bk` current with the online estimator; the returned plan carries the final vectors
/// and is disabled for variants without shifting. Variants with MCL add `α·Σ L_MCL` over
/// `L_to..L_bk`, with one non-dominant language per batch paired against its dominant
/// translations.
pub fn train_stage2(
    params: &mut ToyModelParams,
    corpus: &Corpus,
    cfg: &TrainingConfig,
    seed: u64,
    variant: Variant,
    plan: ShiftPlan,
    log: &mut TrainingLog,
) -> Result<ShiftPlan> {
    cfg.validate()?;
    check_corpus(corpus)?;
    let mut plan = plan.with_enabled(variant.uses_shift());
    let dominant = plan.dominant();
    let area = plan.area().clone();
    let mcl_cfg = MclConfig {
        temperature: cfg.temperature,
        pooling: cfg.pooling,
        layers: area.mcl_layers().collect(),
    };
    let alpha = if variant.uses_mcl() { cfg.alpha } else { 0.0 };
    let non_dominant = corpus.spec.non_dominant_languages();
    let mut pair_samplers: BTreeMap<LangId, EpochSampler> = non_dominant
        .iter()
        .map(|&l| {
            let idx = corpus.train_indices_of(l);
            (l, EpochSampler::new(idx, derive_seed(seed, &format!("stage2/pairs/{l}"))))
        })
        .collect();
    if let Some((l, _)) = pair_samplers.iter().find(|(_, s)| s.order.is_empty()) {
        return Err(Error::Config(format!("language {l} has no training sentences")));
    }
    let mut sampler = EpochSampler::new((0..corpus.train.len()).collect(), derive_seed(seed, "stage2/sampler"));
    let mut mix_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "stage2/mix"));
    let mut estimators: BTreeMap<(LangId, usize), OnlineVectorEstimator> = BTreeMap::new();
    for lang in corpus.spec.languages() {
        for layer in [area.l_to, area.l_bk] {
            let v = plan.vectors().get(lang, layer)?.to_vec();
            estimators.insert((lang, layer), OnlineVectorEstimator::new(v, cfg.update_weights)?);
        }
    }
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum).with_max_grad_norm(cfg.max_grad_norm);

    for step in 0..cfg.stage2_steps {
        let batch: Vec<Sample> = sampler.batch(cfg.batch_size).into_iter().map(|i| sample_of(corpus, i)).collect();
        let batch_lang = non_dominant[step % non_dominant.len()];
        let pairs: Vec<TranslationPair> = (0..cfg.mcl_batch_size)
            .map(|_| {
                let lang = if cfg.mix_mcl_languages {
                    non_dominant[mix_rng.random_range(0..non_dominant.len())]
                } else {
                    batch_lang
                };
                let i = pair_samplers.get_mut(&lang).expect("sampler per language").next();
                let concepts = &corpus.train[i].concepts;
                TranslationPair {
                    language: lang,
                    non_dominant: corpus.framed(lang, concepts),
                    dominant: corpus.framed(dominant, concepts),
                }
            })
            .collect();
        let pair_batch = TranslationPairBatch::new(pairs, &corpus.scheme)?;
        let active_plan = plan.is_enabled().then_some(&plan);
        let out = combined_loss(params, &batch, &pair_batch, &mcl_cfg, alpha, active_plan)?;
        opt.step(params, &out.grads);

        let mut checksums = BTreeMap::new();
        if plan.is_enabled() {
            let mut groups: BTreeMap<LangId, Vec<Vec<u32>>> = BTreeMap::new();
            for p in pair_batch.pairs() {
                let concepts: Vec<u32> = p
                    .non_dominant
                    .iter()
                    .filter_map(|&t| corpus.scheme.concept_of(t))
                    .collect();
                groups.entry(p.language).or_default().push(concepts.clone());
                groups.entry(dominant).or_default().push(concepts);
            }
            let means = batch_means(params, &groups, corpus, [area.l_to, area.l_bk], cfg.pooling)?;
            for ((lang, layer), u) in means {
                let est = estimators.get_mut(&(lang, layer)).expect("estimator per slot");
                est.update(&u)?;
                plan.set_vector(lang, layer, est.current.clone())?;
            }
            for lang in corpus.spec.languages() {
                checksums.insert(lang, plan.vectors().checksum(lang)?);
            }
        }
        log.records.push(LogRecord {
            stage: 2,
            variant,
            step,
            msft: out.msft,
            mcl: out.mcl.iter().copied().collect(),
            total: out.value,
            mcl_language: variant.uses_mcl().then_some(batch_lang).filter(|_| !cfg.mix_mcl_languages),
            vector_checksums: checksums,
        });
    }
    if !params.is_finite() {
        return Err(Error::Numerical("stage 2 produced non-finite parameters".into()));
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub stage1: ToyModelParams,
    pub calibration: Calibration,
    pub params: ToyModelParams,
    /// Final plan (vectors after online updates).
    pub plan: ShiftPlan,
    pub log: TrainingLog,
}

/// Stage 1, calibration of the stage-1 model (vectors, profile, area), then stage 2.
pub fn train_two_stage(
    init: ToyModelParams,
    corpus: &Corpus,
    cfg: &TrainingConfig,
    calibration: &CalibrationConfig,
    seed: u64,
    variant: Variant,
) -> Result<TwoStageResult> {
    let mut params = init;
    let mut log = TrainingLog::default();
    train_stage1(&mut params, corpus, cfg, seed, &mut log).map_err(|e| e.in_stage("stage1"))?;
    let stage1 = params.clone();
    let cal = calibrate(&params, corpus, calibration, "stage1").map_err(|e| e.in_stage("calibrate"))?;
    let plan = cal.plan(corpus.spec.dominant_language)?;
    let plan = train_stage2(&mut params, corpus, cfg, seed, variant, plan, &mut log)
        .map_err(|e| e.in_stage("stage2"))?;
    Ok(TwoStageResult {
        stage1,
        calibration: cal,
        params,
        plan,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::{init_params, ModelConfig};

    #[test]
    fn zero_learning_rate_is_identity() {
        let p0 = init_params(&ModelConfig::default(), 2).unwrap();
        let mut p = p0.clone();
        let mut g = p.zeros_like();
        g.set_flat(5, 1.0);
        Sgd::new(0.0, 0.9).step(&mut p, &g);
        assert_eq!(p, p0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = init_params(&ModelConfig::default(), 2).unwrap();
        let x0 = p.get_flat(0);
        let mut g = p.zeros_like();
        g.set_flat(0, 1.0);
        let mut opt = Sgd::new(0.1, 0.5);
        opt.step(&mut p, &g);
        opt.step(&mut p, &g);
        assert!((p.get_flat(0) - (x0 - 0.1 - 0.15)).abs() < 1e-15);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(Variant::NoShift.uses_mcl() && !Variant::NoShift.uses_shift());
        assert!(Variant::NoMcl.uses_shift() && !Variant::NoMcl.uses_mcl());
    }

    #[test]
    fn epoch_sampler_covers_every_index() {
        let mut s = EpochSampler::new((0..10).collect(), 3);
        let mut seen = s.batch(10);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
