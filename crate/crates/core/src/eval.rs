//! Held-out metrics: next-token accuracy, language consistency of greedy generations, and
//! the subspace distance between dominant-like and dominant states over the shift area.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compute_language_vectors, fit_subspace, subspace_distance, Ridge, ShiftArea,
};
use crate::intervention::{hooks_for, ShiftPlan};
use crate::lang::LangId;
use crate::toymodel::{argmax, forward_with_hooks, generate, Corpus, Token, TokenScheme, ToyModelParams, BOS};
use crate::training::{dump_activations, CalibrationConfig, DumpMode, Variant};

pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Minimum fraction of generated content tokens in the query language.
    pub consistency_threshold: f64,
    /// Content tokens of each test sentence given as the generation prompt.
    pub prompt_tokens: usize,
    pub max_new_tokens: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            consistency_threshold: DEFAULT_CONSISTENCY_THRESHOLD,
            prompt_tokens: 3,
            max_new_tokens: 8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.consistency_threshold > 0.0 && self.consistency_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "consistency threshold {} outside (0, 1]",
                self.consistency_threshold
            )));
        }
        if self.prompt_tokens == 0 || self.max_new_tokens == 0 {
            return Err(Error::Config("prompt and generation lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Whether one generation is in `lang`: at least `threshold` of its content tokens belong
/// to `lang`. A generation without content tokens is not consistent.
pub fn is_consistent(tokens: &[Token], lang: LangId, scheme: &TokenScheme, threshold: f64) -> bool {
    let langs: Vec<Option<LangId>> = tokens
        .iter()
        .filter(|&&t| !TokenScheme::is_special(t))
        .map(|&t| scheme.language_of(t))
        .collect();
    if langs.is_empty() {
        return false;
    }
    let hits = langs.iter().filter(|l| **l == Some(lang)).count();
    hits as f64 / langs.len() as f64 >= threshold - 1e-12
}

/// Fraction of consistent generations per query language.
pub fn language_consistency(
    outputs: &[Vec<Token>],
    query_languages: &[LangId],
    scheme: &TokenScheme,
    threshold: f64,
) -> Result<BTreeMap<LangId, f64>> {
    if outputs.is_empty() {
        return Err(Error::InvalidInput("no generations to score".into()));
    }
    if outputs.len() != query_languages.len() {
        return Err(Error::DimensionMismatch {
            context: "generations vs query languages",
            expected: query_languages.len(),
            actual: outputs.len(),
        });
    }
    let mut counts: BTreeMap<LangId, (usize, usize)> = BTreeMap::new();
    for (out, &lang) in outputs.iter().zip(query_languages) {
        let e = counts.entry(lang).or_default();
        e.1 += 1;
        if is_consistent(out, lang, scheme, threshold) {
            e.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(l, (hit, n))| (l, hit as f64 / n as f64))
        .collect())
}

/// Teacher-forced next-token accuracy over every predicted position of `sentences`
/// rendered in `lang`.
pub fn next_token_accuracy(
    params: &ToyModelParams,
    corpus: &Corpus,
    sentences: &[Vec<u32>],
    lang: LangId,
    plan: Option<&ShiftPlan>,
) -> Result<f64> {
    let hooks = hooks_for(plan, lang)?;
    let counts: Vec<(usize, usize)> = sentences
        .par_iter()
        .map(|c| -> Result<(usize, usize)> {
            let tokens = corpus.framed(lang, c);
            let trace = forward_with_hooks(params, &tokens, &hooks)?;
            let hits = (0..tokens.len() - 1)
                .filter(|&p| argmax(trace.logits.row(p)) as Token == tokens[p + 1])
                .count();
            Ok((hits, tokens.len() - 1))
        })
        .collect::<Result<_>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(Error::InvalidInput("no positions to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Greedy continuations of the first `prompt_tokens` content tokens of each sentence.
pub fn generations(
    params: &ToyModelParams,
    corpus: &Corpus,
    sentences: &[Vec<u32>],
    lang: LangId,
    plan: Option<&ShiftPlan>,
    cfg: &EvalConfig,
) -> Result<Vec<Vec<Token>>> {
    let hooks = hooks_for(plan, lang)?;
    sentences
        .par_iter()
        .map(|c| {
            let k = cfg.prompt_tokens.min(c.len());
            let mut prompt = vec![BOS];
            prompt.extend(corpus.scheme.render(lang, &c[..k]));
            generate(params, &prompt, &hooks, cfg.max_new_tokens)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaDistance {
    /// Language → per-layer distances over the area, ascending layers.
    pub per_language: BTreeMap<LangId, Vec<f64>>,
    pub layers: Vec<usize>,
    pub mean: f64,
}

/// Mean distance over the layers of `area` and the non-dominant languages between the
/// dominant-like states (hooked forward with vectors freshly computed from this model on
/// the calibration split) and the dominant states.
pub fn area_distance(
    params: &ToyModelParams,
    corpus: &Corpus,
    area: &ShiftArea,
    cal: &CalibrationConfig,
) -> Result<AreaDistance> {
    let languages = corpus.spec.languages();
    let dominant = corpus.spec.dominant_language;
    let native = dump_activations(params, corpus, &corpus.calibration, &languages, DumpMode::Native, "eval")?;
    let vectors = compute_language_vectors(&native, cal.pooling)?;
    let plan = ShiftPlan::new(dominant, area.clone(), vectors, true)?;
    let like = dump_activations(
        params,
        corpus,
        &corpus.calibration,
        &languages,
        DumpMode::DominantLike(&plan),
        "eval",
    )?;
    let mut per_language = BTreeMap::new();
    let mut all = Vec::new();
    for lang in corpus.spec.non_dominant_languages() {
        let dists = area
            .selected_layers
            .iter()
            .map(|&layer| -> Result<f64> {
                let a = fit_subspace(like.tokens(lang, layer)?, cal.variance_threshold)?;
                let b = fit_subspace(like.tokens(dominant, layer)?, cal.variance_threshold)?;
                let eps = Ridge::Relative(cal.relative_ridge).resolve(&a, &b);
                subspace_distance(&a, &b, eps).map_err(|e| e.at_layer(layer))
            })
            .collect::<Result<Vec<_>>>()?;
        all.extend(dists.iter().copied());
        per_language.insert(lang, dists);
    }
    Ok(AreaDistance {
        per_language,
        layers: area.selected_layers.clone(),
        mean: all.iter().sum::<f64>() / all.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub shift: bool,
    pub mcl: bool,
    pub accuracy: BTreeMap<LangId, f64>,
    pub non_dominant_accuracy: f64,
    pub language_consistency: BTreeMap<LangId, f64>,
    pub non_dominant_consistency: f64,
    pub area_distance: AreaDistance,
}

/// Evaluates a trained model on the test split. `plan` supplies the hooks when the
/// variant shifts; `area` is the stage-1 area used for the distance diagnostic.
pub fn evaluate(
    params: &ToyModelParams,
    corpus: &Corpus,
    variant: Variant,
    plan: Option<&ShiftPlan>,
    area: &ShiftArea,
    cal: &CalibrationConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let plan = plan.filter(|p| p.is_enabled());
    let mut accuracy = BTreeMap::new();
    let mut outputs = Vec::new();
    let mut queries = Vec::new();
    for lang in corpus.spec.languages() {
        accuracy.insert(lang, next_token_accuracy(params, corpus, &corpus.test, lang, plan)?);
        let gens = generations(params, corpus, &corpus.test, lang, plan, cfg)?;
        queries.extend(std::iter::repeat_n(lang, gens.len()));
        outputs.extend(gens);
    }
    let consistency = language_consistency(&outputs, &queries, &corpus.scheme, cfg.consistency_threshold)?;
    let non_dom = corpus.spec.non_dominant_languages();
    let mean_over = |m: &BTreeMap<LangId, f64>| non_dom.iter().map(|l| m[l]).sum::<f64>() / non_dom.len() as f64;
    Ok(EvalReport {
        variant,
        shift: variant.uses_shift(),
        mcl: variant.uses_mcl(),
        non_dominant_accuracy: mean_over(&accuracy),
        non_dominant_consistency: mean_over(&consistency),
        accuracy,
        language_consistency: consistency,
        area_distance: area_distance(params, corpus, area, cal)?,
    })
}
