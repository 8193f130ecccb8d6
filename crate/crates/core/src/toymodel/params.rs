use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::repstore::Container;

pub const CHECKPOINT_KIND: &str = "checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            hidden_dim: 32,
            num_heads: 2,
            mlp_dim: 64,
            vocab_size: 3 + 4 * 64,
            max_positions: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.hidden_dim == 0 || self.num_heads == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.mlp_dim == 0 || self.vocab_size < 4 || self.max_positions < 2 {
            return bad("mlp_dim, vocab_size and max_positions are too small".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Weights of the pre-norm decoder. Row vectors (gains, biases) are `1 × n` matrices.
///
/// The same type stores gradients, see [`ToyModelParams::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub blocks: Vec<BlockParams>,
    pub final_gain: Matrix,
    pub final_bias: Matrix,
    /// `d × V`
    pub head: Matrix,
    pub head_bias: Matrix,
}

const BLOCK_TENSORS: [&str; 12] = [
    "ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2",
];

impl BlockParams {
    fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

impl ToyModelParams {
    /// All tensors in a fixed order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors()) {
                out.push((format!("block{}/{name}", i + 1), t));
            }
        }
        out.push(("final_gain".into(), &self.final_gain));
        out.push(("final_bias".into(), &self.final_bias));
        out.push(("head".into(), &self.head));
        out.push(("head_bias".into(), &self.head_bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
        out.push(&mut self.head);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Flat coordinate `index` in [`Self::named_tensors`] order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.data().len() {
                return t.data()[index];
            }
            index -= t.data().len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            let n = t.data().len();
            if index < n {
                t.data_mut()[index] = value;
                return;
            }
            index -= n;
        }
        panic!("flat parameter index out of range");
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
                *x += a * y;
            }
        }
    }

    pub fn scale_in_place(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().map(|t| t.max_abs()).fold(0.0, f64::max)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "config": self.config, "seed": self.seed });
        let mut c = Container::new(CHECKPOINT_KIND, meta);
        for (name, t) in self.named_tensors() {
            c.push_f64(name, t.clone());
        }
        c.write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read_kind(path, CHECKPOINT_KIND)?;
        let config: ModelConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::Format(format!("bad checkpoint config: {e}")))?;
        let seed = c.meta["seed"]
            .as_u64()
            .ok_or_else(|| Error::Format("checkpoint lacks a seed".into()))?;
        let mut params = init_params(&config, seed)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            let stored = c.f64_block(name)?;
            if stored.shape() != t.shape() {
                return Err(Error::Format(format!("tensor `{name}` has the wrong shape")));
            }
            if !stored.is_finite() {
                return Err(Error::Format(format!("tensor `{name}` has non-finite values")));
            }
            *t = stored.clone();
        }
        Ok(params)
    }
}

/// Scaled Gaussian initialization: projections `N(0, 1/fan_in)`, the residual output
/// projections additionally scaled by `1/√(2L)`, embeddings `N(0, 0.1²)`, norm gains 1,
/// biases 0.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ToyModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, m, v) = (config.hidden_dim, config.mlp_dim, config.vocab_size);
    let residual_scale = 1.0 / (2.0 * config.num_layers as f64).sqrt();
    let mut gaussian = |rows: usize, cols: usize, std: f64| -> Matrix {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
        Matrix::from_vec(rows, cols, data)
    };
    let ones = |n: usize| Matrix::from_vec(1, n, vec![1.0; n]);
    let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();

    let token_embedding = gaussian(v, d, 0.1);
    let position_embedding = gaussian(config.max_positions, d, 0.1);
    let blocks = (0..config.num_layers)
        .map(|_| BlockParams {
            ln1_gain: ones(d),
            ln1_bias: Matrix::zeros(1, d),
            wq: gaussian(d, d, inv_sqrt(d)),
            wk: gaussian(d, d, inv_sqrt(d)),
            wv: gaussian(d, d, inv_sqrt(d)),
            wo: gaussian(d, d, inv_sqrt(d) * residual_scale),
            ln2_gain: ones(d),
            ln2_bias: Matrix::zeros(1, d),
            w1: gaussian(d, m, inv_sqrt(d)),
            b1: Matrix::zeros(1, m),
            w2: gaussian(m, d, inv_sqrt(m) * residual_scale),
            b2: Matrix::zeros(1, d),
        })
        .collect();
    let head = gaussian(d, v, inv_sqrt(d));
    Ok(ToyModelParams {
        config: *config,
        seed,
        token_embedding,
        position_embedding,
        blocks,
        final_gain: ones(d),
        final_bias: Matrix::zeros(1, d),
        head,
        head_bias: Matrix::zeros(1, v),
    })
}
