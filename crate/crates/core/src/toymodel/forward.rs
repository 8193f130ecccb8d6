//! Forward pass with hidden-state hooks, and its exact reverse-mode gradient.
//!
//! A sequence of `T` tokens flows through
//!
//! ```text
//! x⁰ = E[tokens] + P[0..T]
//! xⁱ = block_i(xⁱ⁻¹)                 (the hidden state of layer i)
//! xⁱ ← hook(xⁱ) for hooks at layer i
//! logits = LN_f(x^L) · W_head + b_head
//! ```
//!
//! with pre-norm blocks `x + Attn(LN₁ x)` then `x + MLP(LN₂ x)`, causal multi-head
//! attention and a tanh-approximated GELU.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::params::{BlockParams, ToyModelParams};
use super::tokens::Token;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A transformation of one layer's hidden states (`T × d`, one row per position).
///
/// Hooks must preserve the shape. Backpropagation passes gradients through hooks
/// unchanged, which is exact for constant translations such as the shift hooks.
pub trait HiddenStateHook: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn apply(&self, h: &Matrix) -> Result<Matrix>;
}

/// A hook built from a closure.
pub struct FnHook<F> {
    name: String,
    f: F,
}

impl<F> FnHook<F>
where
    F: Fn(&Matrix) -> Matrix + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> fmt::Debug for FnHook<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnHook").field("name", &self.name).finish()
    }
}

impl<F> HiddenStateHook for FnHook<F>
where
    F: Fn(&Matrix) -> Matrix + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, h: &Matrix) -> Result<Matrix> {
        Ok((self.f)(h))
    }
}

#[derive(Debug, Clone)]
pub struct LayerHook {
    /// 1-based.
    pub layer: usize,
    pub hook: Arc<dyn HiddenStateHook>,
}

impl LayerHook {
    pub fn new(layer: usize, hook: impl HiddenStateHook + 'static) -> Self {
        Self {
            layer,
            hook: Arc::new(hook),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct HookEvent {
    pub layer: usize,
    pub hook: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `hidden[i - 1]` is the (post-hook) state of layer `i`.
    pub hidden: Vec<Matrix>,
    /// States before any hook ran, for hooked layers only.
    pub pre_hook: BTreeMap<usize, Matrix>,
    /// `T × V`
    pub logits: Matrix,
    pub interventions: Vec<HookEvent>,
}

impl ForwardTrace {
    pub fn layer(&self, layer: usize) -> &Matrix {
        &self.hidden[layer - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len()
    }
}

pub fn forward(params: &ToyModelParams, tokens: &[Token]) -> Result<ForwardTrace> {
    forward_with_hooks(params, tokens, &[])
}

pub fn forward_with_hooks(
    params: &ToyModelParams,
    tokens: &[Token],
    hooks: &[LayerHook],
) -> Result<ForwardTrace> {
    let (trace, _) = forward_cached(params, tokens, hooks, params.config.num_layers)?;
    Ok(trace)
}

/// Runs independent sequences in parallel; results keep the input order.
pub fn forward_batch(
    params: &ToyModelParams,
    batch: &[(Vec<Token>, Vec<LayerHook>)],
) -> Result<Vec<ForwardTrace>> {
    batch
        .par_iter()
        .map(|(tokens, hooks)| forward_with_hooks(params, tokens, hooks))
        .collect()
}

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

struct BlockTape {
    ln1: LnCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities per head, `T × T`.
    probs: Vec<Matrix>,
    attn: Matrix,
    ln2: LnCache,
    c: Matrix,
    z: Matrix,
    g: Matrix,
}

/// Intermediate values of one forward pass, consumed by [`backward`].
pub struct Tape {
    tokens: Vec<Token>,
    blocks: Vec<BlockTape>,
    head: Option<(LnCache, Matrix)>,
}

impl Tape {
    /// Number of blocks evaluated.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

fn validate_inputs(params: &ToyModelParams, tokens: &[Token], hooks: &[LayerHook], depth: usize) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_positions {
        return Err(Error::InvalidInput(format!(
            "sequence of {} tokens exceeds max_positions {}",
            tokens.len(),
            cfg.max_positions
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::InvalidInput(format!(
            "token {t} outside vocabulary of size {}",
            cfg.vocab_size
        )));
    }
    if let Some(h) = hooks.iter().find(|h| h.layer == 0 || h.layer > cfg.num_layers) {
        return Err(Error::IndexOutOfRange {
            index: h.layer,
            max: cfg.num_layers,
        });
    }
    if depth == 0 || depth > cfg.num_layers {
        return Err(Error::IndexOutOfRange {
            index: depth,
            max: cfg.num_layers,
        });
    }
    Ok(())
}

/// Forward pass through the first `depth` blocks, keeping a [`Tape`] for backpropagation.
/// Logits are computed only when `depth` equals the model depth; otherwise the trace
/// holds an empty `0 × 0` logits matrix.
pub fn forward_cached(
    params: &ToyModelParams,
    tokens: &[Token],
    hooks: &[LayerHook],
    depth: usize,
) -> Result<(ForwardTrace, Tape)> {
    validate_inputs(params, tokens, hooks, depth)?;
    let cfg = &params.config;
    let (t_len, d) = (tokens.len(), cfg.hidden_dim);

    let mut x = Matrix::zeros(t_len, d);
    for (pos, &tok) in tokens.iter().enumerate() {
        let e = params.token_embedding.row(tok as usize);
        let p = params.position_embedding.row(pos);
        for ((o, a), b) in x.row_mut(pos).iter_mut().zip(e).zip(p) {
            *o = a + b;
        }
    }

    let mut hidden = Vec::with_capacity(depth);
    let mut pre_hook = BTreeMap::new();
    let mut interventions = Vec::new();
    let mut blocks = Vec::with_capacity(depth);
    for (i, bp) in params.blocks.iter().take(depth).enumerate() {
        let layer = i + 1;
        let (out, tape) = block_forward(bp, &x, cfg.num_heads);
        x = out;
        blocks.push(tape);
        let mut at_layer = hooks.iter().filter(|h| h.layer == layer).peekable();
        if at_layer.peek().is_some() {
            pre_hook.insert(layer, x.clone());
            for h in at_layer {
                let y = h.hook.apply(&x)?;
                if y.shape() != x.shape() {
                    return Err(Error::HookContract(format!(
                        "hook `{}` at layer {layer} changed shape {:?} to {:?}",
                        h.hook.name(),
                        x.shape(),
                        y.shape()
                    )));
                }
                x = y;
                interventions.push(HookEvent {
                    layer,
                    hook: h.hook.name().to_string(),
                });
            }
        }
        hidden.push(x.clone());
    }

    let (logits, head) = if depth == cfg.num_layers {
        let (f, ln) = layer_norm(&x, &params.final_gain, &params.final_bias);
        let mut logits = f.matmul(&params.head);
        add_row_bias(&mut logits, &params.head_bias);
        (logits, Some((ln, f)))
    } else {
        (Matrix::zeros(0, 0), None)
    };

    Ok((
        ForwardTrace {
            hidden,
            pre_hook,
            logits,
            interventions,
        },
        Tape {
            tokens: tokens.to_vec(),
            blocks,
            head,
        },
    ))
}

/// Accumulates into `grads` the gradient of a scalar loss whose partial derivatives are
/// `d_logits` (if the logits were used) and `d_hidden[layer]` with respect to the
/// post-hook hidden state of each listed layer.
pub fn backward(
    params: &ToyModelParams,
    tape: &Tape,
    d_logits: Option<&Matrix>,
    d_hidden: &BTreeMap<usize, Matrix>,
    grads: &mut ToyModelParams,
) -> Result<()> {
    let cfg = &params.config;
    let depth = tape.depth();
    let (t_len, d) = (tape.tokens.len(), cfg.hidden_dim);
    if let Some(&layer) = d_hidden.keys().find(|&&l| l == 0 || l > depth) {
        return Err(Error::IndexOutOfRange { index: layer, max: depth });
    }

    let mut dx = Matrix::zeros(t_len, d);
    if let Some(dl) = d_logits {
        let (ln, f) = tape.head.as_ref().ok_or_else(|| {
            Error::InvalidInput("logit gradient given for a truncated forward pass".into())
        })?;
        if dl.shape() != (t_len, cfg.vocab_size) {
            return Err(Error::DimensionMismatch {
                context: "logit gradient rows",
                expected: t_len,
                actual: dl.rows(),
            });
        }
        grads.head.add_assign(&f.t_matmul(dl));
        add_column_sums(&mut grads.head_bias, dl);
        let df = dl.matmul_t(&params.head);
        dx = layer_norm_backward(ln, &params.final_gain, &df, &mut grads.final_gain, &mut grads.final_bias);
    }

    for layer in (1..=depth).rev() {
        if let Some(g) = d_hidden.get(&layer) {
            if g.shape() != (t_len, d) {
                return Err(Error::DimensionMismatch {
                    context: "hidden-state gradient rows",
                    expected: t_len,
                    actual: g.rows(),
                });
            }
            dx.add_assign(g);
        }
        let i = layer - 1;
        dx = block_backward(
            &params.blocks[i],
            &tape.blocks[i],
            &dx,
            cfg.num_heads,
            &mut grads.blocks[i],
        );
    }

    for (pos, &tok) in tape.tokens.iter().enumerate() {
        let g = dx.row(pos);
        for (o, v) in grads.token_embedding.row_mut(tok as usize).iter_mut().zip(g) {
            *o += v;
        }
        for (o, v) in grads.position_embedding.row_mut(pos).iter_mut().zip(g) {
            *o += v;
        }
    }
    Ok(())
}

fn add_row_bias(m: &mut Matrix, bias: &Matrix) {
    let b = bias.data();
    for r in 0..m.rows() {
        for (o, v) in m.row_mut(r).iter_mut().zip(b) {
            *o += v;
        }
    }
}

fn add_column_sums(acc: &mut Matrix, m: &Matrix) {
    for r in m.row_iter() {
        for (o, v) in acc.data_mut().iter_mut().zip(r) {
            *o += v;
        }
    }
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, LnCache) {
    let (n, d) = x.shape();
    let mut y = Matrix::zeros(n, d);
    let mut xhat = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd.push(s);
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[(r, j)] = h;
            y[(r, j)] = gain.data()[j] * h + bias.data()[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    cache: &LnCache,
    gain: &Matrix,
    dy: &Matrix,
    d_gain: &mut Matrix,
    d_bias: &mut Matrix,
) -> Matrix {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let g = gain.data();
    for r in 0..n {
        let xh = cache.xhat.row(r);
        let dyr = dy.row(r);
        let mut mean_dh = 0.0;
        let mut mean_dh_xh = 0.0;
        for j in 0..d {
            d_gain.data_mut()[j] += dyr[j] * xh[j];
            d_bias.data_mut()[j] += dyr[j];
            let dh = dyr[j] * g[j];
            mean_dh += dh;
            mean_dh_xh += dh * xh[j];
        }
        mean_dh /= d as f64;
        mean_dh_xh /= d as f64;
        let s = cache.rstd[r];
        for j in 0..d {
            dx[(r, j)] = s * (dyr[j] * g[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

fn head_columns(m: &Matrix, head: usize, dh: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), dh);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[head * dh..(head + 1) * dh]);
    }
    out
}

fn put_head_columns(dst: &mut Matrix, src: &Matrix, head: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[head * dh..(head + 1) * dh].copy_from_slice(src.row(r));
    }
}

fn block_forward(bp: &BlockParams, x: &Matrix, num_heads: usize) -> (Matrix, BlockTape) {
    let (t_len, d) = x.shape();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, ln1) = layer_norm(x, &bp.ln1_gain, &bp.ln1_bias);
    let q = a.matmul(&bp.wq);
    let k = a.matmul(&bp.wk);
    let v = a.matmul(&bp.wv);
    let mut attn = Matrix::zeros(t_len, d);
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (qh, kh, vh) = (head_columns(&q, h, dh), head_columns(&k, h, dh), head_columns(&v, h, dh));
        let mut p = qh.matmul_t(&kh);
        for i in 0..t_len {
            let row = &mut p.row_mut(i)[..=i];
            let mut max = f64::NEG_INFINITY;
            for s in row.iter_mut() {
                *s *= scale;
                max = max.max(*s);
            }
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
            p.row_mut(i)[i + 1..].fill(0.0);
        }
        put_head_columns(&mut attn, &p.matmul(&vh), h, dh);
        probs.push(p);
    }
    let mut x_mid = x.add(&attn.matmul(&bp.wo));

    let (c, ln2) = layer_norm(&x_mid, &bp.ln2_gain, &bp.ln2_bias);
    let mut z = c.matmul(&bp.w1);
    add_row_bias(&mut z, &bp.b1);
    let g = Matrix::from_vec(z.rows(), z.cols(), z.data().iter().map(|&v| gelu(v)).collect());
    let mut mlp = g.matmul(&bp.w2);
    add_row_bias(&mut mlp, &bp.b2);
    x_mid.add_assign(&mlp);

    (
        x_mid,
        BlockTape {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            c,
            z,
            g,
        },
    )
}

/// Returns the gradient with respect to the block input.
fn block_backward(
    bp: &BlockParams,
    tape: &BlockTape,
    d_out: &Matrix,
    num_heads: usize,
    grads: &mut BlockParams,
) -> Matrix {
    let (t_len, d) = d_out.shape();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    grads.w2.add_assign(&tape.g.t_matmul(d_out));
    add_column_sums(&mut grads.b2, d_out);
    let dg = d_out.matmul_t(&bp.w2);
    let dz = Matrix::from_vec(
        dg.rows(),
        dg.cols(),
        dg.data()
            .iter()
            .zip(tape.z.data())
            .map(|(g, &z)| g * gelu_grad(z))
            .collect(),
    );
    grads.w1.add_assign(&tape.c.t_matmul(&dz));
    add_column_sums(&mut grads.b1, &dz);
    let dc = dz.matmul_t(&bp.w1);
    let mut d_mid = layer_norm_backward(&tape.ln2, &bp.ln2_gain, &dc, &mut grads.ln2_gain, &mut grads.ln2_bias);
    d_mid.add_assign(d_out);

    grads.wo.add_assign(&tape.attn.t_matmul(&d_mid));
    let d_attn = d_mid.matmul_t(&bp.wo);
    let mut dq = Matrix::zeros(t_len, d);
    let mut dk = Matrix::zeros(t_len, d);
    let mut dv = Matrix::zeros(t_len, d);
    for h in 0..num_heads {
        let p = &tape.probs[h];
        let d_oh = head_columns(&d_attn, h, dh);
        let (qh, kh, vh) = (
            head_columns(&tape.q, h, dh),
            head_columns(&tape.k, h, dh),
            head_columns(&tape.v, h, dh),
        );
        put_head_columns(&mut dv, &p.t_matmul(&d_oh), h, dh);
        let dp = d_oh.matmul_t(&vh);
        let mut ds = Matrix::zeros(t_len, t_len);
        for i in 0..t_len {
            let pr = &p.row(i)[..=i];
            let dpr = &dp.row(i)[..=i];
            let inner: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for j in 0..=i {
                ds[(i, j)] = pr[j] * (dpr[j] - inner) * scale;
            }
        }
        put_head_columns(&mut dq, &ds.matmul(&kh), h, dh);
        put_head_columns(&mut dk, &ds.t_matmul(&qh), h, dh);
    }
    grads.wq.add_assign(&tape.a.t_matmul(&dq));
    grads.wk.add_assign(&tape.a.t_matmul(&dk));
    grads.wv.add_assign(&tape.a.t_matmul(&dv));
    let mut da = dq.matmul_t(&bp.wq);
    da.add_assign(&dk.matmul_t(&bp.wk));
    da.add_assign(&dv.matmul_t(&bp.wv));
    let mut d_in = layer_norm_backward(&tape.ln1, &bp.ln1_gain, &da, &mut grads.ln1_gain, &mut grads.ln1_bias);
    d_in.add_assign(&d_mid);
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::params::{init_params, ModelConfig};

    fn small() -> ToyModelParams {
        let cfg = ModelConfig {
            num_layers: 3,
            hidden_dim: 8,
            num_heads: 2,
            mlp_dim: 12,
            vocab_size: 11,
            max_positions: 8,
        };
        init_params(&cfg, 9).unwrap()
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for z in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-5;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_grad(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_changing_hook_rejected() {
        let p = small();
        let hook = LayerHook::new(2, FnHook::new("drop", |h: &Matrix| h.slice_rows(0, 1)));
        let err = forward_with_hooks(&p, &[1, 4, 5], &[hook]).unwrap_err();
        assert!(matches!(err, Error::HookContract(_)));
    }

    #[test]
    fn hook_layer_out_of_range() {
        let p = small();
        let hook = LayerHook::new(4, FnHook::new("id", |h: &Matrix| h.clone()));
        assert!(forward_with_hooks(&p, &[1, 4], &[hook]).is_err());
    }

    #[test]
    fn rejects_bad_tokens() {
        let p = small();
        assert!(forward(&p, &[]).is_err());
        assert!(forward(&p, &[11]).is_err());
        assert!(forward(&p, &[1; 9]).is_err());
    }

    #[test]
    fn truncated_forward_matches_prefix() {
        let p = small();
        let full = forward(&p, &[1, 5, 6, 2]).unwrap();
        let (part, _) = forward_cached(&p, &[1, 5, 6, 2], &[], 2).unwrap();
        assert_eq!(part.hidden[..], full.hidden[..2]);
        assert_eq!(part.logits.shape(), (0, 0));
    }
}
