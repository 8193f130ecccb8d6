//! Deterministic synthetic multilingual corpus.
//!
//! Concept sequences come from one shared Markov chain; every language renders a
//! concept through its own block of token ids (see [`TokenScheme`]), so any sentence
//! has an exact translation in every other language. The training split assigns each
//! sentence one language according to `data_share`; calibration and test splits are
//! parallel (every sequence is available in every language).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokens::{Token, TokenScheme};
use crate::error::{Error, Result};
use crate::lang::LangId;
use crate::repstore::Container;

pub const CORPUS_KIND: &str = "corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub num_languages: u32,
    pub num_concepts: u32,
    pub dominant_language: LangId,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub transition_seed: u64,
    pub data_share: Vec<f64>,
    /// Relative probabilities of each concept's successors (one entry per successor).
    pub successor_weights: Vec<f64>,
    pub train_sentences: usize,
    pub calibration_per_language: usize,
    pub test_per_language: usize,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_languages: 4,
            num_concepts: 64,
            dominant_language: LangId(0),
            min_sentence_len: 6,
            max_sentence_len: 12,
            transition_seed: 17,
            data_share: vec![0.76, 0.08, 0.08, 0.08],
            successor_weights: vec![4.0, 2.0, 1.0],
            train_sentences: 800,
            calibration_per_language: 256,
            test_per_language: 256,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.num_languages < 2 {
            return cfg(format!("need at least 2 languages, got {}", self.num_languages));
        }
        if self.num_concepts < 2 {
            return cfg(format!("need at least 2 concepts, got {}", self.num_concepts));
        }
        if self.dominant_language.0 as u32 >= self.num_languages {
            return cfg(format!("dominant language {} out of range", self.dominant_language));
        }
        if self.min_sentence_len == 0 || self.min_sentence_len > self.max_sentence_len {
            return cfg(format!(
                "invalid sentence length range {}..={}",
                self.min_sentence_len, self.max_sentence_len
            ));
        }
        if self.data_share.len() != self.num_languages as usize {
            return cfg(format!(
                "data_share has {} entries for {} languages",
                self.data_share.len(),
                self.num_languages
            ));
        }
        if self.data_share.iter().any(|s| !(*s >= 0.0)) {
            return cfg("data shares must be non-negative".into());
        }
        let total: f64 = self.data_share.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return cfg(format!("data shares sum to {total}, expected 1"));
        }
        let dom = self.data_share[self.dominant_language.index()];
        if self
            .data_share
            .iter()
            .enumerate()
            .any(|(i, &s)| i != self.dominant_language.index() && s >= dom)
        {
            return cfg("the dominant language must have the strictly largest data share".into());
        }
        if self.successor_weights.is_empty()
            || self.successor_weights.len() > self.num_concepts as usize
            || self.successor_weights.iter().any(|w| !(*w > 0.0))
        {
            return cfg("successor weights must be positive and at most num_concepts long".into());
        }
        if self.calibration_per_language < 2 || self.test_per_language < 1 {
            return cfg("calibration needs ≥ 2 and test ≥ 1 sentences per language".into());
        }
        Ok(())
    }

    pub fn scheme(&self) -> TokenScheme {
        TokenScheme {
            num_languages: self.num_languages,
            num_concepts: self.num_concepts,
        }
    }

    pub fn languages(&self) -> Vec<LangId> {
        (0..self.num_languages as u16).map(LangId).collect()
    }

    pub fn non_dominant_languages(&self) -> Vec<LangId> {
        self.languages()
            .into_iter()
            .filter(|&l| l != self.dominant_language)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub language: LangId,
    pub concepts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: SyntheticCorpusSpec,
    pub scheme: TokenScheme,
    /// `transitions[c]` lists `(successor, probability)`.
    pub transitions: Vec<Vec<(u32, f64)>>,
    pub train: Vec<Sentence>,
    pub calibration: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

impl Corpus {
    /// `[BOS, tokens…, EOS]` for one concept sequence rendered in `lang`.
    pub fn framed(&self, lang: LangId, concepts: &[u32]) -> Vec<Token> {
        self.scheme.framed(lang, concepts)
    }

    pub fn train_indices_of(&self, lang: LangId) -> Vec<usize> {
        self.train
            .iter()
            .enumerate()
            .filter(|(_, s)| s.language == lang)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new(CORPUS_KIND, serde_json::to_value(&self.spec)?);
        c.push_u32(
            "train/languages",
            self.train.iter().map(|s| s.language.0 as u32).collect(),
        );
        push_sequences(&mut c, "train", self.train.iter().map(|s| s.concepts.as_slice()));
        push_sequences(&mut c, "calibration", self.calibration.iter().map(Vec::as_slice));
        push_sequences(&mut c, "test", self.test.iter().map(Vec::as_slice));
        c.write(path)
    }

    /// Reads a corpus and checks it against the generator output for its spec.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read_kind(path, CORPUS_KIND)?;
        let spec: SyntheticCorpusSpec = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Format(format!("bad corpus header: {e}")))?;
        let regenerated = make_parallel_corpus(&spec)?;
        let langs = c.u32_block("train/languages")?;
        let train_concepts = read_sequences(&c, "train")?;
        if langs.len() != train_concepts.len() {
            return Err(Error::Format("train languages and sentences disagree".into()));
        }
        let train = langs
            .iter()
            .zip(train_concepts)
            .map(|(&l, concepts)| Sentence {
                language: LangId(l as u16),
                concepts,
            })
            .collect();
        let corpus = Corpus {
            spec,
            scheme: regenerated.scheme,
            transitions: regenerated.transitions.clone(),
            train,
            calibration: read_sequences(&c, "calibration")?,
            test: read_sequences(&c, "test")?,
        };
        if corpus != regenerated {
            return Err(Error::Format(
                "corpus contents do not match the generator output for its spec".into(),
            ));
        }
        Ok(corpus)
    }
}

fn push_sequences<'a>(c: &mut Container, name: &str, seqs: impl Iterator<Item = &'a [u32]>) {
    let mut offsets = vec![0u32];
    let mut flat = Vec::new();
    for s in seqs {
        flat.extend_from_slice(s);
        offsets.push(flat.len() as u32);
    }
    c.push_u32(format!("{name}/offsets"), offsets);
    c.push_u32(format!("{name}/concepts"), flat);
}

fn read_sequences(c: &Container, name: &str) -> Result<Vec<Vec<u32>>> {
    let offsets = c.u32_block(&format!("{name}/offsets"))?;
    let flat = c.u32_block(&format!("{name}/concepts"))?;
    if offsets.first() != Some(&0) || offsets.last().map(|&o| o as usize) != Some(flat.len()) {
        return Err(Error::Format(format!("bad offsets for split `{name}`")));
    }
    offsets
        .windows(2)
        .map(|w| {
            if w[0] > w[1] {
                return Err(Error::Format(format!("decreasing offsets in split `{name}`")));
            }
            Ok(flat[w[0] as usize..w[1] as usize].to_vec())
        })
        .collect()
}

/// Per-language sentence counts: largest-remainder rounding of `total · share`.
pub fn share_counts(total: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn make_parallel_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let scheme = spec.scheme();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.transition_seed);
    let c = spec.num_concepts;

    let weight_sum: f64 = spec.successor_weights.iter().sum();
    let transitions: Vec<Vec<(u32, f64)>> = (0..c)
        .map(|_| {
            let picks = rand::seq::index::sample(&mut rng, c as usize, spec.successor_weights.len());
            picks
                .iter()
                .zip(&spec.successor_weights)
                .map(|(s, w)| (s as u32, w / weight_sum))
                .collect()
        })
        .collect();

    let sample_sequence = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.random_range(spec.min_sentence_len..=spec.max_sentence_len);
        let mut seq = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..c);
        seq.push(cur);
        while seq.len() < len {
            let u: f64 = rng.random();
            let succ = &transitions[cur as usize];
            let mut acc = 0.0;
            let mut next = succ[succ.len() - 1].0;
            for &(s, p) in succ {
                acc += p;
                if u < acc {
                    next = s;
                    break;
                }
            }
            cur = next;
            seq.push(cur);
        }
        seq
    };

    let counts = share_counts(spec.train_sentences, &spec.data_share);
    let mut train = Vec::with_capacity(spec.train_sentences);
    for (lang, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            train.push(Sentence {
                language: LangId(lang as u16),
                concepts: sample_sequence(&mut rng),
            });
        }
    }
    train.shuffle(&mut rng);
    let calibration = (0..spec.calibration_per_language)
        .map(|_| sample_sequence(&mut rng))
        .collect();
    let test = (0..spec.test_per_language)
        .map(|_| sample_sequence(&mut rng))
        .collect();

    Ok(Corpus {
        spec: spec.clone(),
        scheme,
        transitions,
        train,
        calibration,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_must_sum_to_one() {
        let spec = SyntheticCorpusSpec {
            data_share: vec![0.7, 0.1, 0.1, 0.05],
            ..Default::default()
        };
        assert!(matches!(make_parallel_corpus(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn dominant_share_must_be_largest() {
        let spec = SyntheticCorpusSpec {
            data_share: vec![0.4, 0.4, 0.1, 0.1],
            ..Default::default()
        };
        assert!(make_parallel_corpus(&spec).is_err());
    }

    #[test]
    fn share_counts_exact() {
        assert_eq!(share_counts(10_000, &[0.8, 0.1, 0.1]), vec![8000, 1000, 1000]);
        assert_eq!(share_counts(10, &[0.34, 0.33, 0.33]).iter().sum::<usize>(), 10);
    }

    #[test]
    fn renderings_differ_by_language_offset() {
        let spec = SyntheticCorpusSpec {
            num_languages: 2,
            data_share: vec![0.9, 0.1],
            train_sentences: 10,
            ..Default::default()
        };
        let corpus = make_parallel_corpus(&spec).unwrap();
        let seq = &corpus.test[0];
        let a = corpus.scheme.render(LangId(0), seq);
        let b = corpus.scheme.render(LangId(1), seq);
        assert!(a.iter().zip(&b).all(|(x, y)| y - x == spec.num_concepts));
    }

    #[test]
    fn sentence_lengths_in_range() {
        let corpus = make_parallel_corpus(&SyntheticCorpusSpec::default()).unwrap();
        for s in corpus.train.iter().map(|s| &s.concepts).chain(&corpus.test) {
            assert!((6..=12).contains(&s.len()));
        }
    }
}
