use super::forward::{forward_with_hooks, LayerHook};
use super::params::ToyModelParams;
use super::tokens::{Token, EOS};
use crate::error::{Error, Result};

/// Greedy decoding (ties go to the lowest token id). Each step reruns the full forward
/// pass with `hooks`, so hooks see prompt and generated positions alike. Stops after
/// EOS, after `max_tokens` new tokens, or when the context is full. Returns only the
/// generated tokens.
pub fn generate(
    params: &ToyModelParams,
    prompt: &[Token],
    hooks: &[LayerHook],
    max_tokens: usize,
) -> Result<Vec<Token>> {
    if prompt.is_empty() {
        return Err(Error::InvalidInput("generation needs a non-empty prompt".into()));
    }
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_tokens && seq.len() < params.config.max_positions {
        let trace = forward_with_hooks(params, &seq, hooks)?;
        let last = trace.logits.row(seq.len() - 1);
        let next = argmax(last) as Token;
        out.push(next);
        seq.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }
}
