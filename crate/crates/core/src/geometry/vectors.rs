use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lang::LangId;
use crate::repstore::{sentence_vectors, ActivationDump, PoolingMethod};

/// Per-language, per-layer mean sentence vectors `v[lang][layer]` (layers 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageVectorTable {
    pub num_layers: usize,
    pub hidden_dim: usize,
    vectors: BTreeMap<LangId, Vec<Vec<f64>>>,
}

impl LanguageVectorTable {
    /// `vectors[lang][i]` is the vector for layer `i + 1`.
    pub fn from_vectors(vectors: BTreeMap<LangId, Vec<Vec<f64>>>) -> Result<Self> {
        let first = vectors
            .values()
            .next()
            .ok_or_else(|| Error::InvalidInput("vector table needs at least one language".into()))?;
        let num_layers = first.len();
        let hidden_dim = first.first().map_or(0, Vec::len);
        if num_layers == 0 || hidden_dim == 0 {
            return Err(Error::InvalidInput("vector table needs layers and dimensions".into()));
        }
        for (lang, per_layer) in &vectors {
            if per_layer.len() != num_layers {
                return Err(Error::InvalidInput(format!(
                    "language {lang} covers {} layers, expected {num_layers}",
                    per_layer.len()
                )));
            }
            for v in per_layer {
                if v.len() != hidden_dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "language {lang} has a malformed or non-finite vector"
                    )));
                }
            }
        }
        Ok(Self {
            num_layers,
            hidden_dim,
            vectors,
        })
    }

    pub fn languages(&self) -> impl Iterator<Item = LangId> + '_ {
        self.vectors.keys().copied()
    }

    pub fn contains(&self, lang: LangId) -> bool {
        self.vectors.contains_key(&lang)
    }

    pub fn get(&self, lang: LangId, layer: usize) -> Result<&[f64]> {
        self.vectors
            .get(&lang)
            .ok_or_else(|| Error::Lookup(format!("language {lang} not in vector table")))?
            .get(layer.wrapping_sub(1))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("layer {layer} not in vector table")))
    }

    pub fn set(&mut self, lang: LangId, layer: usize, v: Vec<f64>) -> Result<()> {
        if v.len() != self.hidden_dim {
            return Err(Error::DimensionMismatch {
                context: "language vector",
                expected: self.hidden_dim,
                actual: v.len(),
            });
        }
        let slot = self
            .vectors
            .get_mut(&lang)
            .and_then(|l| l.get_mut(layer.wrapping_sub(1)))
            .ok_or_else(|| Error::Lookup(format!("({lang}, layer {layer}) not in vector table")))?;
        *slot = v;
        Ok(())
    }

    /// Hex SHA-256 over the little-endian bytes of one language's vectors (all layers).
    pub fn checksum(&self, lang: LangId) -> Result<String> {
        let per_layer = self
            .vectors
            .get(&lang)
            .ok_or_else(|| Error::Lookup(format!("language {lang} not in vector table")))?;
        let mut h = Sha256::new();
        for v in per_layer {
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// `v[l][i]` = mean over sentences of the pooled layer-`i` states of language `l`.
pub fn compute_language_vectors(
    dump: &ActivationDump,
    method: PoolingMethod,
) -> Result<LanguageVectorTable> {
    let mut vectors = BTreeMap::new();
    for &lang in &dump.languages {
        let mut per_layer = Vec::with_capacity(dump.num_layers);
        for layer in 1..=dump.num_layers {
            let sv = sentence_vectors(dump, lang, layer, method)?;
            if sv.rows() == 0 {
                return Err(Error::InvalidInput(format!(
                    "language {lang} has no sentences at layer {layer}"
                )));
            }
            per_layer.push(sv.column_means());
        }
        vectors.insert(lang, per_layer);
    }
    LanguageVectorTable::from_vectors(vectors)
}
