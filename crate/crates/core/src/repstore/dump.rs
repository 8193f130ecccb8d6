use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::Container;
use super::pool::{pool_rows, PoolingMethod};
use crate::error::{Error, Result};
use crate::lang::LangId;
use crate::numkit::Matrix;

pub const DUMP_KIND: &str = "activations";

/// Token representations per (language, layer), with sentence boundaries.
///
/// Layers are 1-based: layer `i` holds the output of transformer block `i`.
/// `sentence_offsets[lang]` starts at 0, is strictly increasing, and ends at the
/// number of token rows of every block of that language.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub model_id: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub languages: Vec<LangId>,
    pub sentence_offsets: BTreeMap<LangId, Vec<usize>>,
    pub blocks: BTreeMap<(LangId, usize), Matrix>,
}

#[derive(Serialize, Deserialize)]
struct DumpMeta {
    model_id: String,
    num_layers: usize,
    hidden_dim: usize,
    languages: Vec<LangId>,
    sentence_offsets: BTreeMap<LangId, Vec<usize>>,
}

fn block_name(lang: LangId, layer: usize) -> String {
    format!("activations/lang={lang}/layer={layer}")
}

impl ActivationDump {
    pub fn new(model_id: impl Into<String>, num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            num_layers,
            hidden_dim,
            languages: Vec::new(),
            sentence_offsets: BTreeMap::new(),
            blocks: BTreeMap::new(),
        }
    }

    /// Adds one language: `layers[i]` holds the token states of layer `i + 1`.
    pub fn insert_language(
        &mut self,
        lang: LangId,
        sentence_offsets: Vec<usize>,
        layers: Vec<Matrix>,
    ) -> Result<()> {
        if self.sentence_offsets.contains_key(&lang) {
            return Err(Error::InvalidInput(format!("language {lang} already present")));
        }
        if layers.len() != self.num_layers {
            return Err(Error::DimensionMismatch {
                context: "layers per language",
                expected: self.num_layers,
                actual: layers.len(),
            });
        }
        self.languages.push(lang);
        self.sentence_offsets.insert(lang, sentence_offsets);
        for (i, m) in layers.into_iter().enumerate() {
            self.blocks.insert((lang, i + 1), m);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidInput(msg));
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return invalid("dump needs at least one layer and one hidden dimension".into());
        }
        let langs: BTreeSet<LangId> = self.languages.iter().copied().collect();
        if langs.len() != self.languages.len() {
            return invalid("duplicate language ids".into());
        }
        if langs != self.sentence_offsets.keys().copied().collect() {
            return invalid("sentence offsets do not match the language list".into());
        }
        for layer in 1..=self.num_layers {
            let present: BTreeSet<LangId> = self
                .blocks
                .keys()
                .filter(|(_, l)| *l == layer)
                .map(|(lang, _)| *lang)
                .collect();
            if present != langs {
                return invalid(format!(
                    "layer {layer} has languages {present:?}, expected {langs:?}"
                ));
            }
        }
        for ((lang, layer), m) in &self.blocks {
            if *layer == 0 || *layer > self.num_layers {
                return invalid(format!("block for layer {layer} outside 1..={}", self.num_layers));
            }
            if !langs.contains(lang) {
                return invalid(format!("block for unknown language {lang}"));
            }
            if m.cols() != self.hidden_dim {
                return invalid(format!(
                    "block ({lang}, {layer}) has {} columns, expected {}",
                    m.cols(),
                    self.hidden_dim
                ));
            }
            let offsets = &self.sentence_offsets[lang];
            if offsets.len() < 2 || offsets[0] != 0 || offsets.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!(
                    "sentence offsets of language {lang} must start at 0 and strictly increase"
                ));
            }
            if *offsets.last().expect("len ≥ 2") != m.rows() {
                return invalid(format!(
                    "block ({lang}, {layer}) has {} rows but offsets end at {}",
                    m.rows(),
                    offsets.last().expect("len ≥ 2")
                ));
            }
        }
        Ok(())
    }

    pub fn tokens(&self, lang: LangId, layer: usize) -> Result<&Matrix> {
        self.blocks
            .get(&(lang, layer))
            .ok_or_else(|| Error::Lookup(format!("no block for language {lang}, layer {layer}")))
    }

    pub fn offsets(&self, lang: LangId) -> Result<&[usize]> {
        self.sentence_offsets
            .get(&lang)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("language {lang} not in dump")))
    }

    pub fn num_sentences(&self, lang: LangId) -> Result<usize> {
        Ok(self.offsets(lang)?.len() - 1)
    }

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let meta = DumpMeta {
            model_id: self.model_id.clone(),
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            languages: self.languages.clone(),
            sentence_offsets: self.sentence_offsets.clone(),
        };
        let mut c = Container::new(DUMP_KIND, serde_json::to_value(meta)?);
        for &lang in &self.languages {
            for layer in 1..=self.num_layers {
                c.push_f64(block_name(lang, layer), self.blocks[&(lang, layer)].clone());
            }
        }
        Ok(c)
    }

    fn from_container(c: Container) -> Result<Self> {
        if c.kind != DUMP_KIND {
            return Err(Error::Format(format!("expected an activation dump, found `{}`", c.kind)));
        }
        let meta: DumpMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Format(format!("bad dump header: {e}")))?;
        let mut dump = ActivationDump {
            model_id: meta.model_id,
            num_layers: meta.num_layers,
            hidden_dim: meta.hidden_dim,
            languages: meta.languages,
            sentence_offsets: meta.sentence_offsets,
            blocks: BTreeMap::new(),
        };
        for &lang in &dump.languages {
            for layer in 1..=dump.num_layers {
                let m = c.f64_block(&block_name(lang, layer))?;
                dump.blocks.insert((lang, layer), m.clone());
            }
        }
        dump.validate()?;
        Ok(dump)
    }

    /// Size in bytes of the serialized dump.
    pub fn encoded_len(&self) -> Result<usize> {
        self.to_container()?.encoded_len()
    }
}

pub fn write_dump(dump: &ActivationDump, path: impl AsRef<Path>) -> Result<()> {
    dump.to_container()?.write(path)
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<ActivationDump> {
    ActivationDump::from_container(Container::read(path)?)
}

/// One pooled vector per sentence of `lang` at `layer`.
pub fn sentence_vectors(
    dump: &ActivationDump,
    lang: LangId,
    layer: usize,
    method: PoolingMethod,
) -> Result<Matrix> {
    let tokens = dump.tokens(lang, layer)?;
    let offsets = dump.offsets(lang)?;
    let mut out = Matrix::zeros(offsets.len() - 1, tokens.cols());
    for (i, w) in offsets.windows(2).enumerate() {
        out.row_mut(i)
            .copy_from_slice(&pool_rows(tokens, w[0], w[1], method));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatched_language_sets_are_refused() {
        let mut d = ActivationDump::new("m", 2, 2);
        d.languages = vec![LangId(0), LangId(1)];
        d.sentence_offsets.insert(LangId(0), vec![0, 1]);
        d.sentence_offsets.insert(LangId(1), vec![0, 1]);
        d.blocks.insert((LangId(0), 1), Matrix::zeros(1, 2));
        d.blocks.insert((LangId(0), 2), Matrix::zeros(1, 2));
        d.blocks.insert((LangId(1), 1), Matrix::zeros(1, 2));
        let dir = tempfile::tempdir().unwrap();
        let err = write_dump(&d, dir.path().join("x.shfc")).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
        assert!(!dir.path().join("x.shfc").exists());
    }

    #[test]
    fn lookup_errors() {
        let mut d = ActivationDump::new("m", 1, 2);
        d.insert_language(LangId(0), vec![0, 1], vec![Matrix::zeros(1, 2)])
            .unwrap();
        assert!(matches!(d.tokens(LangId(3), 1), Err(Error::Lookup(_))));
        assert!(matches!(
            sentence_vectors(&d, LangId(0), 2, PoolingMethod::Mean),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn sentence_vectors_single_token_sentences() {
        let mut d = ActivationDump::new("m", 1, 2);
        let toks = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]).unwrap();
        d.insert_language(LangId(0), vec![0, 1, 2], vec![toks.clone()])
            .unwrap();
        for m in [PoolingMethod::Mean, PoolingMethod::Max, PoolingMethod::Last] {
            assert_eq!(sentence_vectors(&d, LangId(0), 1, m).unwrap(), toks);
        }
    }

    #[test]
    fn three_token_sentence_mean() {
        let mut d = ActivationDump::new("m", 1, 2);
        let toks = Matrix::from_rows(&[[1.0, 0.0], [2.0, 3.0], [3.0, 6.0]]).unwrap();
        d.insert_language(LangId(0), vec![0, 3], vec![toks]).unwrap();
        let sv = sentence_vectors(&d, LangId(0), 1, PoolingMethod::Mean).unwrap();
        assert_eq!(sv.shape(), (1, 2));
        assert_eq!(sv.row(0), &[2.0, 3.0]);
    }
}
