use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::LangId;

pub type Token = u32;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const EOS: Token = 2;
pub const NUM_SPECIALS: u32 = 3;

/// Bijection between (language, concept) pairs and content token ids.
///
/// `encode(l, c) = 3 + l·C + c`; ids `0..3` are PAD, BOS, EOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenScheme {
    pub num_languages: u32,
    pub num_concepts: u32,
}

impl TokenScheme {
    pub fn new(num_languages: u32, num_concepts: u32) -> Result<Self> {
        if num_languages == 0 || num_concepts == 0 {
            return Err(Error::InvalidInput(
                "token scheme needs at least one language and one concept".into(),
            ));
        }
        Ok(Self {
            num_languages,
            num_concepts,
        })
    }

    pub fn vocab_size(&self) -> usize {
        (NUM_SPECIALS + self.num_languages * self.num_concepts) as usize
    }

    pub fn encode(&self, lang: LangId, concept: u32) -> Token {
        debug_assert!((lang.0 as u32) < self.num_languages && concept < self.num_concepts);
        NUM_SPECIALS + lang.0 as u32 * self.num_concepts + concept
    }

    pub fn is_special(token: Token) -> bool {
        token < NUM_SPECIALS
    }

    /// `None` for special or out-of-vocabulary tokens.
    pub fn language_of(&self, token: Token) -> Option<LangId> {
        self.decode(token).map(|(l, _)| l)
    }

    pub fn concept_of(&self, token: Token) -> Option<u32> {
        self.decode(token).map(|(_, c)| c)
    }

    pub fn decode(&self, token: Token) -> Option<(LangId, u32)> {
        if token < NUM_SPECIALS || token as usize >= self.vocab_size() {
            return None;
        }
        let k = token - NUM_SPECIALS;
        Some((LangId((k / self.num_concepts) as u16), k % self.num_concepts))
    }

    /// Renders a concept sequence in `lang`, without BOS/EOS.
    pub fn render(&self, lang: LangId, concepts: &[u32]) -> Vec<Token> {
        concepts.iter().map(|&c| self.encode(lang, c)).collect()
    }

    /// `[BOS, content…, EOS]`
    pub fn framed(&self, lang: LangId, concepts: &[u32]) -> Vec<Token> {
        let mut out = Vec::with_capacity(concepts.len() + 2);
        out.push(BOS);
        out.extend(concepts.iter().map(|&c| self.encode(lang, c)));
        out.push(EOS);
        out
    }
}
