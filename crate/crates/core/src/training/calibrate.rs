//! Calibration passes: activation dumps of a model on parallel sentences, language
//! vectors, the shifted distance profile and the resulting shift plan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compute_language_vectors, distance_profile, select_from_distances, DistanceProfile,
    LanguageVectorTable, Ridge, ShiftArea, DEFAULT_RELATIVE_RIDGE, DEFAULT_VARIANCE_THRESHOLD,
};
use crate::intervention::{hooks_for, shift_toward, ShiftPlan};
use crate::lang::LangId;
use crate::numkit::Matrix;
use crate::repstore::{ActivationDump, PoolingMethod};
use crate::toymodel::{forward_with_hooks, Corpus, ToyModelParams};

use super::losses::content_range;

pub const DEFAULT_BETA: f64 = 0.3;

/// Which hidden states a dump records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DumpMode<'a> {
    /// Plain forward passes.
    Native,
    /// Forward passes with the plan's hooks. Inside the area the recorded state is the
    /// dominant-like one: post-hook at `L_to` and in between, pre-hook at `L_bk`.
    DominantLike(&'a ShiftPlan),
}

/// Content-token states of every layer for each language rendering of `sentences`.
pub fn dump_activations(
    params: &ToyModelParams,
    corpus: &Corpus,
    sentences: &[Vec<u32>],
    languages: &[LangId],
    mode: DumpMode<'_>,
    model_id: &str,
) -> Result<ActivationDump> {
    if sentences.is_empty() {
        return Err(Error::InvalidInput("no sentences to dump".into()));
    }
    let cfg = &params.config;
    let mut dump = ActivationDump::new(model_id, cfg.num_layers, cfg.hidden_dim);
    for &lang in languages {
        let (plan, l_bk) = match mode {
            DumpMode::Native => (None, 0),
            DumpMode::DominantLike(p) => (Some(p), p.area().l_bk),
        };
        let hooks = hooks_for(plan, lang)?;
        let per_sentence: Vec<Vec<Matrix>> = sentences
            .par_iter()
            .map(|concepts| -> Result<Vec<Matrix>> {
                let tokens = corpus.framed(lang, concepts);
                let (start, end) = content_range(&tokens)?;
                let trace = forward_with_hooks(params, &tokens, &hooks)?;
                Ok((1..=cfg.num_layers)
                    .map(|layer| {
                        let h = match trace.pre_hook.get(&layer) {
                            Some(pre) if layer == l_bk => pre,
                            _ => trace.layer(layer),
                        };
                        h.slice_rows(start, end)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut offsets = vec![0];
        for s in &per_sentence {
            offsets.push(offsets.last().unwrap() + s[0].rows());
        }
        let layers = (0..cfg.num_layers)
            .map(|i| {
                let data: Vec<f64> = per_sentence
                    .iter()
                    .flat_map(|s| s[i].data().iter().copied())
                    .collect();
                Matrix::new(data.len() / cfg.hidden_dim, cfg.hidden_dim, data)
            })
            .collect::<Result<Vec<_>>>()?;
        dump.insert_language(lang, offsets, layers)?;
    }
    Ok(dump)
}

/// Per non-dominant language, the distance at every layer between its states shifted by
/// that layer's `v_d − v_l` and the dominant states.
pub fn shifted_profiles(
    dump: &ActivationDump,
    vectors: &LanguageVectorTable,
    dominant: LangId,
    variance_threshold: f64,
    ridge: Ridge,
) -> Result<Vec<DistanceProfile>> {
    let dom_states: Vec<Matrix> = (1..=dump.num_layers)
        .map(|i| dump.tokens(dominant, i).cloned())
        .collect::<Result<_>>()?;
    dump.languages
        .iter()
        .filter(|&&l| l != dominant)
        .map(|&lang| {
            let shifted: Vec<Matrix> = (1..=dump.num_layers)
                .map(|i| {
                    shift_toward(
                        dump.tokens(lang, i)?,
                        vectors.get(lang, i)?,
                        vectors.get(dominant, i)?,
                    )
                })
                .collect::<Result<_>>()?;
            distance_profile(&shifted, &dom_states, (lang, dominant), variance_threshold, ridge)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub beta: f64,
    pub variance_threshold: f64,
    pub relative_ridge: f64,
    pub pooling: PoolingMethod,
    /// Manual `(L_to, L_bk)` override of the selected area.
    pub manual_area: Option<(usize, usize)>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            relative_ridge: DEFAULT_RELATIVE_RIDGE,
            pooling: PoolingMethod::Mean,
            manual_area: None,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta {} outside (0, 1]", self.beta)));
        }
        if !(self.variance_threshold > 0.0 && self.variance_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "variance threshold {} outside (0, 1]",
                self.variance_threshold
            )));
        }
        if !(self.relative_ridge > 0.0 && self.relative_ridge.is_finite()) {
            return Err(Error::Config(format!(
                "relative ridge must be positive, got {}",
                self.relative_ridge
            )));
        }
        if let Some((a, b)) = self.manual_area {
            ShiftArea::manual(a, b, num_layers)?;
        }
        Ok(())
    }
}

/// Output of a calibration pass over one model.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub dump: ActivationDump,
    pub vectors: LanguageVectorTable,
    pub profiles: Vec<DistanceProfile>,
    /// Mean of `profiles` per layer.
    pub mean_profile: Vec<f64>,
    pub area: ShiftArea,
}

impl Calibration {
    pub fn plan(&self, dominant: LangId) -> Result<ShiftPlan> {
        ShiftPlan::new(dominant, self.area.clone(), self.vectors.clone(), true)
    }
}

/// Dump on the calibration split, vectors, shifted profiles and area selection.
pub fn calibrate(
    params: &ToyModelParams,
    corpus: &Corpus,
    cfg: &CalibrationConfig,
    model_id: &str,
) -> Result<Calibration> {
    cfg.validate(params.config.num_layers)?;
    let languages = corpus.spec.languages();
    let dominant = corpus.spec.dominant_language;
    let dump = dump_activations(params, corpus, &corpus.calibration, &languages, DumpMode::Native, model_id)?;
    let vectors = compute_language_vectors(&dump, cfg.pooling)?;
    let profiles = shifted_profiles(
        &dump,
        &vectors,
        dominant,
        cfg.variance_threshold,
        Ridge::Relative(cfg.relative_ridge),
    )?;
    let mean_profile = DistanceProfile::average(&profiles)?;
    let area = match cfg.manual_area {
        Some((a, b)) => ShiftArea::manual(a, b, params.config.num_layers)?,
        None => select_from_distances(&mean_profile, cfg.beta)?,
    };
    Ok(Calibration {
        dump,
        vectors,
        profiles,
        mean_profile,
        area,
    })
}
