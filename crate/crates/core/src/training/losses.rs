//! MSFT (autoregressive cross-entropy) and MCL (per-layer InfoNCE) losses with exact
//! gradients with respect to every model parameter.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{hooks_for, ShiftPlan};
use crate::lang::LangId;
use crate::numkit::{dot, norm, Matrix};
use crate::repstore::{pool_rows, pool_rows_backward, PoolingMethod};
use crate::toymodel::{
    backward, forward_cached, Token, TokenScheme, ToyModelParams, BOS, EOS,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// One tokenized training sequence and its language.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub language: LangId,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPair {
    /// Language of the non-dominant side.
    pub language: LangId,
    pub non_dominant: Vec<Token>,
    pub dominant: Vec<Token>,
}

/// Exact translation pairs `(s_l^i, s_d^i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPairBatch {
    pairs: Vec<TranslationPair>,
}

impl TranslationPairBatch {
    /// Checks that the batch is non-empty and that both sides of every pair carry the
    /// same concept sequence.
    pub fn new(pairs: Vec<TranslationPair>, scheme: &TokenScheme) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("translation batch is empty".into()));
        }
        for (i, p) in pairs.iter().enumerate() {
            let concepts = |t: &[Token]| t.iter().map(|&x| scheme.concept_of(x)).collect::<Vec<_>>();
            if concepts(&p.non_dominant) != concepts(&p.dominant) {
                return Err(Error::InvalidInput(format!("pair {i} is not concept-aligned")));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[TranslationPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MclConfig {
    pub temperature: f64,
    pub pooling: PoolingMethod,
    /// Layers carrying the loss, normally `L_to..L_bk`.
    pub layers: Vec<usize>,
}

impl Default for MclConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            pooling: PoolingMethod::Mean,
            layers: Vec::new(),
        }
    }
}

impl MclConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l == 0 || l > num_layers) {
            return Err(Error::IndexOutOfRange {
                index: l,
                max: num_layers,
            });
        }
        Ok(())
    }
}

/// A loss value with its gradient.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grads: ToyModelParams,
}

#[derive(Debug, Clone)]
pub struct MclOutput {
    /// `(layer, loss)` in ascending layer order.
    pub per_layer: Vec<(usize, f64)>,
    pub grads: ToyModelParams,
}

impl MclOutput {
    pub fn total(&self) -> f64 {
        self.per_layer.iter().map(|(_, v)| v).sum()
    }
}

#[derive(Debug, Clone)]
pub struct CombinedOutput {
    pub value: f64,
    pub msft: f64,
    pub mcl: Vec<(usize, f64)>,
    pub grads: ToyModelParams,
}

/// Row range of the content tokens: BOS at the start and EOS at the end are excluded.
pub fn content_range(tokens: &[Token]) -> Result<(usize, usize)> {
    let start = usize::from(tokens.first() == Some(&BOS));
    let end = if tokens.len() > start && tokens.last() == Some(&EOS) {
        tokens.len() - 1
    } else {
        tokens.len()
    };
    if start >= end {
        return Err(Error::InvalidInput("sequence has no content tokens".into()));
    }
    Ok((start, end))
}

/// Sums per-sample gradients in input order so the result does not depend on scheduling.
fn reduce_in_order(params: &ToyModelParams, parts: Vec<ToyModelParams>) -> ToyModelParams {
    let mut total = params.zeros_like();
    for g in &parts {
        total.axpy(1.0, g);
    }
    total
}

/// Mean next-token cross-entropy over all predicted positions of the batch. Samples in a
/// language shifted by `plan` run with its hooks; hook vectors receive no gradient.
pub fn msft_loss(
    params: &ToyModelParams,
    batch: &[Sample],
    plan: Option<&ShiftPlan>,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("MSFT batch is empty".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.tokens.len() < 2) {
        return Err(Error::InvalidInput(format!(
            "sample of length {} has no next-token targets",
            s.tokens.len()
        )));
    }
    let count: usize = batch.iter().map(|s| s.tokens.len() - 1).sum();
    let inv = 1.0 / count as f64;
    let depth = params.config.num_layers;
    let parts: Vec<(f64, ToyModelParams)> = batch
        .par_iter()
        .map(|s| -> Result<(f64, ToyModelParams)> {
            let hooks = hooks_for(plan, s.language)?;
            let (trace, tape) = forward_cached(params, &s.tokens, &hooks, depth)?;
            let t_len = s.tokens.len();
            let mut d_logits = Matrix::zeros(t_len, params.config.vocab_size);
            let mut loss = 0.0;
            for pos in 0..t_len - 1 {
                let target = s.tokens[pos + 1] as usize;
                let row = trace.logits.row(pos);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
                let lse = max + sum.ln();
                loss += lse - row[target];
                let d = d_logits.row_mut(pos);
                for (o, z) in d.iter_mut().zip(row) {
                    *o = (z - lse).exp() * inv;
                }
                d[target] -= inv;
            }
            let mut grads = params.zeros_like();
            backward(params, &tape, Some(&d_logits), &BTreeMap::new(), &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let value = parts.iter().map(|(l, _)| l).sum::<f64>() * inv;
    let grads = reduce_in_order(params, parts.into_iter().map(|(_, g)| g).collect());
    Ok(LossOutput { value, grads })
}

/// InfoNCE over cosine similarities, summed over anchors:
/// `Σᵢ −log( exp(sim(aᵢ, bᵢ)/τ) / Σⱼ exp(sim(aᵢ, bⱼ)/τ) )`.
/// Returns the loss and its gradients with respect to `a` and `b`.
pub fn info_nce(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidInput("contrastive batch is empty".into()));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "contrastive batch sides",
            expected: n,
            actual: b.len(),
        });
    }
    let norms = |side: &[Vec<f64>]| -> Result<Vec<f64>> {
        side.iter()
            .enumerate()
            .map(|(i, v)| {
                let r = norm(v);
                if r > 0.0 && r.is_finite() {
                    Ok(r)
                } else {
                    Err(Error::ZeroNormEmbedding { index: i })
                }
            })
            .collect()
    };
    let (na, nb) = (norms(a)?, norms(b)?);
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(&a[i], &b[j]) / (na[i] * nb[j])).collect())
        .collect();

    let mut loss = 0.0;
    // dL/dsim
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let logits: Vec<f64> = sim[i].iter().map(|s| s / temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[i];
        for j in 0..n {
            let p = (logits[j] - lse).exp();
            g[i][j] = (p - if i == j { 1.0 } else { 0.0 }) / temperature;
        }
    }

    // ∂cos(x, y)/∂x = y/(|x||y|) − cos·x/|x|²
    let d = a[0].len();
    let mut ga = vec![vec![0.0; d]; n];
    let mut gb = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let gij = g[i][j];
            if gij == 0.0 {
                continue;
            }
            let s = sim[i][j];
            let (ab, aa, bb) = (na[i] * nb[j], na[i] * na[i], nb[j] * nb[j]);
            for k in 0..d {
                ga[i][k] += gij * (b[j][k] / ab - s * a[i][k] / aa);
                gb[j][k] += gij * (a[i][k] / ab - s * b[j][k] / bb);
            }
        }
    }
    Ok((loss, ga, gb))
}

struct SideStates {
    /// `pooled[layer]` for each requested layer.
    pooled: BTreeMap<usize, Vec<f64>>,
    states: BTreeMap<usize, Matrix>,
    tape: crate::toymodel::Tape,
    range: (usize, usize),
}

fn side_forward(
    params: &ToyModelParams,
    tokens: &[Token],
    language: LangId,
    plan: Option<&ShiftPlan>,
    layers: &[usize],
    pooling: PoolingMethod,
) -> Result<SideStates> {
    let depth = *layers.iter().max().expect("non-empty layers");
    let hooks = hooks_for(plan, language)?;
    let (trace, tape) = forward_cached(params, tokens, &hooks, depth)?;
    let range = content_range(tokens)?;
    let mut pooled = BTreeMap::new();
    let mut states = BTreeMap::new();
    for &l in layers {
        let h = trace.layer(l);
        pooled.insert(l, pool_rows(h, range.0, range.1, pooling));
        states.insert(l, h.clone());
    }
    Ok(SideStates {
        pooled,
        states,
        tape,
        range,
    })
}

fn side_backward(
    params: &ToyModelParams,
    side: &SideStates,
    pooling: PoolingMethod,
    grad_pooled: &BTreeMap<usize, Vec<f64>>,
) -> Result<ToyModelParams> {
    let mut d_hidden = BTreeMap::new();
    for (&layer, gp) in grad_pooled {
        let h = &side.states[&layer];
        let mut g = Matrix::zeros(h.rows(), h.cols());
        pool_rows_backward(h, side.range.0, side.range.1, pooling, gp, &mut g);
        d_hidden.insert(layer, g);
    }
    let mut grads = params.zeros_like();
    backward(params, &side.tape, None, &d_hidden, &mut grads)?;
    Ok(grads)
}

/// MCL summed over `cfg.layers`. The non-dominant side runs with the plan's hooks, so at
/// layers from `L_to` on its states are dominant-like; the dominant side never has hooks.
/// Gradients flow through both sides.
pub fn mcl_loss(
    params: &ToyModelParams,
    batch: &TranslationPairBatch,
    cfg: &MclConfig,
    plan: Option<&ShiftPlan>,
) -> Result<MclOutput> {
    cfg.validate(params.config.num_layers)?;
    if cfg.layers.is_empty() {
        return Err(Error::Config("MCL needs at least one layer".into()));
    }
    let mut layers = cfg.layers.clone();
    layers.sort_unstable();
    layers.dedup();
    let pairs = batch.pairs();
    let n = pairs.len();

    let jobs: Vec<(&[Token], LangId, Option<&ShiftPlan>)> = pairs
        .iter()
        .map(|p| (p.non_dominant.as_slice(), p.language, plan))
        .chain(pairs.iter().map(|p| (p.dominant.as_slice(), p.language, None)))
        .collect();
    let sides: Vec<SideStates> = jobs
        .par_iter()
        .map(|&(tokens, lang, pl)| side_forward(params, tokens, lang, pl, &layers, cfg.pooling))
        .collect::<Result<_>>()?;
    let (shifted, dominant) = sides.split_at(n);

    let mut per_layer = Vec::with_capacity(layers.len());
    let mut grad_pooled: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); 2 * n];
    for &layer in &layers {
        let a: Vec<Vec<f64>> = shifted.iter().map(|s| s.pooled[&layer].clone()).collect();
        let b: Vec<Vec<f64>> = dominant.iter().map(|s| s.pooled[&layer].clone()).collect();
        let (loss, ga, gb) = info_nce(&a, &b, cfg.temperature).map_err(|e| e.at_layer(layer))?;
        per_layer.push((layer, loss));
        for (i, g) in ga.into_iter().chain(gb).enumerate() {
            grad_pooled[i].insert(layer, g);
        }
    }

    let parts: Vec<ToyModelParams> = sides
        .par_iter()
        .zip(grad_pooled.par_iter())
        .map(|(side, gp)| side_backward(params, side, cfg.pooling, gp))
        .collect::<Result<_>>()?;
    Ok(MclOutput {
        per_layer,
        grads: reduce_in_order(params, parts),
    })
}

/// MCL at a single layer `t`.
pub fn mcl_loss_layer(
    params: &ToyModelParams,
    batch: &TranslationPairBatch,
    layer: usize,
    cfg: &MclConfig,
    plan: Option<&ShiftPlan>,
) -> Result<LossOutput> {
    if !cfg.layers.is_empty() && !cfg.layers.contains(&layer) {
        return Err(Error::InvalidInput(format!(
            "layer {layer} is not an MCL layer of this configuration"
        )));
    }
    let single = MclConfig {
        layers: vec![layer],
        ..cfg.clone()
    };
    let out = mcl_loss(params, batch, &single, plan)?;
    Ok(LossOutput {
        value: out.total(),
        grads: out.grads,
    })
}

/// `L_MSFT + α · Σ_t L_MCL^t`; with `α = 0` the MCL term is skipped entirely.
pub fn combined_loss(
    params: &ToyModelParams,
    msft_batch: &[Sample],
    mcl_batch: &TranslationPairBatch,
    cfg: &MclConfig,
    alpha: f64,
    plan: Option<&ShiftPlan>,
) -> Result<CombinedOutput> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    let msft = msft_loss(params, msft_batch, plan)?;
    if alpha == 0.0 {
        return Ok(CombinedOutput {
            value: msft.value,
            msft: msft.value,
            mcl: Vec::new(),
            grads: msft.grads,
        });
    }
    let mcl = mcl_loss(params, mcl_batch, cfg, plan)?;
    let mut grads = msft.grads;
    grads.axpy(alpha, &mcl.grads);
    Ok(CombinedOutput {
        value: msft.value + alpha * mcl.total(),
        msft: msft.value,
        mcl: mcl.per_layer,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let (l, ga, _) = info_nce(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 0.05).unwrap();
        assert_eq!(l, 0.0);
        assert!(ga[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn orthogonal_pair_example() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (l, _, _) = info_nce(&e, &e, 1.0).unwrap();
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_reports_index() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let b = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            info_nce(&a, &b, 0.05),
            Err(Error::ZeroNormEmbedding { index: 1 })
        ));
    }

    #[test]
    fn content_range_skips_specials() {
        assert_eq!(content_range(&[BOS, 5, 6, EOS]).unwrap(), (1, 3));
        assert_eq!(content_range(&[5, 6]).unwrap(), (0, 2));
        assert!(content_range(&[BOS, EOS]).is_err());
    }

    #[test]
    fn info_nce_gradient_matches_differences() {
        let a = vec![vec![0.3, -1.2, 0.8], vec![1.1, 0.4, -0.2], vec![-0.5, 0.9, 0.6]];
        let b = vec![vec![0.2, -1.0, 1.0], vec![0.9, 0.1, 0.3], vec![-0.7, 0.4, 0.2]];
        let tau = 0.5;
        let (_, ga, gb) = info_nce(&a, &b, tau).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..3 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[i][k] += h;
                am[i][k] -= h;
                let fd = (info_nce(&ap, &b, tau).unwrap().0 - info_nce(&am, &b, tau).unwrap().0) / (2.0 * h);
                assert!((fd - ga[i][k]).abs() < 1e-7);
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[i][k] += h;
                bm[i][k] -= h;
                let fd = (info_nce(&a, &bp, tau).unwrap().0 - info_nce(&a, &bm, tau).unwrap().0) / (2.0 * h);
                assert!((fd - gb[i][k]).abs() < 1e-7);
            }
        }
    }
}
