//! Minimal decoder-only transformer with hook points for the three circuits.
//!
//! Pre-norm blocks (RMSNorm -> multi-head causal attention -> residual,
//! RMSNorm -> GELU MLP -> residual), learned positional embeddings and an
//! untied unembedding head with bias. Everything is f32 and single-threaded
//! per forward pass, so identical inputs give bit-identical traces.

mod forward;
pub mod planted;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::math::{self, Matrix};
use crate::vocab::{NO, YES};
use crate::TokenId;

pub use forward::{ForwardCache, ForwardTrace, KnockoutEdge};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub d_ff: usize,
    pub seed: u64,
    pub max_positions: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Err(Error::config(format!("model.{field}"), msg));
        if self.n_layers == 0 {
            return err("n_layers", "must be at least 1".into());
        }
        if self.n_heads == 0 {
            return err("n_heads", "must be at least 1".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return err(
                "d_model",
                format!(
                    "{} is not a positive multiple of n_heads = {}",
                    self.d_model, self.n_heads
                ),
            );
        }
        if self.vocab_size < 2
            || (YES as usize) >= self.vocab_size
            || (NO as usize) >= self.vocab_size
        {
            return err(
                "vocab_size",
                "must be at least 2 to hold the reserved Yes/No tokens".into(),
            );
        }
        if self.d_ff == 0 {
            return err("d_ff", "must be at least 1".into());
        }
        if self.max_positions == 0 {
            return err("max_positions", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Weights of one decoder block. Projection matrices are `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: Vec<f32>,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub mlp_norm: Vec<f32>,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

impl Block {
    fn zeros(d_model: usize, d_ff: usize) -> Self {
        Self {
            attn_norm: vec![1.0; d_model],
            w_q: Matrix::zeros(d_model, d_model),
            w_k: Matrix::zeros(d_model, d_model),
            w_v: Matrix::zeros(d_model, d_model),
            w_o: Matrix::zeros(d_model, d_model),
            mlp_norm: vec![1.0; d_model],
            w_up: Matrix::zeros(d_ff, d_model),
            w_down: Matrix::zeros(d_model, d_ff),
        }
    }
}

/// Model weights. Immutable once built and `Sync`, so one model can serve
/// many concurrent forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `(vocab_size, d_model)`.
    pub token_embedding: Matrix,
    /// `(max_positions, d_model)`.
    pub position_embedding: Matrix,
    pub blocks: Vec<Block>,
    pub final_norm: Vec<f32>,
    /// Unembedding head stored as `(vocab_size, d_model)`: row `t` produces logit `t`.
    pub head: Matrix,
    pub head_bias: Vec<f32>,
}

/// One visual prefix followed by text tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    pub visual: EmbeddingSet,
    pub text: Vec<TokenId>,
}

impl InputSequence {
    pub fn new(visual: EmbeddingSet, text: Vec<TokenId>) -> Self {
        Self { visual, text }
    }

    pub fn len(&self) -> usize {
        self.visual.len() + self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Model {
    /// All-zero weights with unit norm gains; the starting point for hand
    /// constructions.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        Ok(Self {
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_positions, d),
            blocks: (0..config.n_layers)
                .map(|_| Block::zeros(d, config.d_ff))
                .collect(),
            final_norm: vec![1.0; d],
            head: Matrix::zeros(config.vocab_size, d),
            head_bias: vec![0.0; config.vocab_size],
            config,
        })
    }

    /// Seeded random initialization. Same config (including seed) gives
    /// bit-identical weights.
    pub fn build(config: ModelConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let cfg = model.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fill = |m: &mut Matrix, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in &mut m.data {
                *v = dist.sample(&mut rng) as f32;
            }
        };
        let d = cfg.d_model as f64;
        let inv_d = 1.0 / d.sqrt();
        fill(&mut model.token_embedding, inv_d);
        fill(&mut model.position_embedding, 0.1 * inv_d);
        for block in &mut model.blocks {
            fill(&mut block.w_q, inv_d);
            fill(&mut block.w_k, inv_d);
            fill(&mut block.w_v, inv_d);
            fill(&mut block.w_o, inv_d);
            fill(&mut block.w_up, inv_d);
            fill(&mut block.w_down, 1.0 / (cfg.d_ff as f64).sqrt());
        }
        fill(&mut model.head, inv_d);
        Ok(model)
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn embedding_row(&self, id: TokenId) -> Result<&[f32]> {
        if id as usize >= self.config.vocab_size {
            return Err(Error::Shape(format!(
                "token id {id} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(self.token_embedding.row(id as usize))
    }

    /// `[visual; embed(text)]` as row-major `(N + M, d_model)`, without
    /// positional embeddings.
    pub fn assemble_input(&self, visual: &EmbeddingSet, text: &[TokenId]) -> Result<Vec<f32>> {
        let d = self.d_model();
        if !visual.is_empty() && visual.width() != d {
            return Err(Error::Shape(format!(
                "visual width {} does not match d_model {d}",
                visual.width()
            )));
        }
        let mut out = Vec::with_capacity((visual.len() + text.len()) * d);
        out.extend_from_slice(visual.as_slice());
        for &t in text {
            out.extend_from_slice(self.embedding_row(t)?);
        }
        Ok(out)
    }

    /// Final norm, head and bias: pre-softmax logits for a residual vector.
    pub fn logits(&self, h: &[f32]) -> Result<Vec<f32>> {
        if h.len() != self.d_model() {
            return Err(Error::Shape(format!(
                "hidden state width {} does not match d_model {}",
                h.len(),
                self.d_model()
            )));
        }
        Ok(self.logits_unchecked(h))
    }

    pub(crate) fn logits_unchecked(&self, h: &[f32]) -> Vec<f32> {
        let normed = math::rms_norm(h, &self.final_norm);
        let mut logits = self.head.matvec(&normed);
        for (l, b) in logits.iter_mut().zip(&self.head_bias) {
            *l += b;
        }
        logits
    }

    /// Vocabulary distribution for any residual-stream vector.
    pub fn unembed(&self, h: &[f32]) -> Result<Vec<f32>> {
        Ok(math::softmax(&self.logits(h)?))
    }

    /// Greedy next token at the last position and its probability.
    pub fn next_token(
        &self,
        input: &InputSequence,
        spec: Option<&crate::intervention::InterventionSpec>,
    ) -> Result<(TokenId, f32)> {
        let trace = self.forward(input, spec)?;
        let last = trace.last_logits().ok_or_else(|| {
            Error::Input("cannot predict a next token for an empty sequence".into())
        })?;
        let id = math::argmax(last);
        let probs = math::softmax(last);
        Ok((id as TokenId, probs[id]))
    }
}
