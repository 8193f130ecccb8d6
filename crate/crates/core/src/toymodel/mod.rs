//! Desk-scale multilingual language model: a synthetic parallel corpus, a small
//! pre-norm decoder-only transformer with hidden-state hooks, and greedy generation.

mod corpus;
mod forward;
mod generate;
mod params;
mod tokens;

pub use corpus::{
    make_parallel_corpus, share_counts, Corpus, Sentence, SyntheticCorpusSpec, CORPUS_KIND,
};
pub use forward::{
    backward, forward, forward_batch, forward_cached, forward_with_hooks, FnHook, ForwardTrace,
    HiddenStateHook, HookEvent, LayerHook, Tape, LAYER_NORM_EPS,
};
pub use generate::generate;
pub(crate) use generate::argmax;
pub use params::{init_params, BlockParams, ModelConfig, ToyModelParams, CHECKPOINT_KIND};
pub use tokens::{Token, TokenScheme, BOS, EOS, NUM_SPECIALS, PAD};
