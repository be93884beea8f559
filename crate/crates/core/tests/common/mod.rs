//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stc_core::{EmbeddingSet, InputSequence, Model, ModelConfig, TokenId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config(
    seed: u64,
    n_layers: usize,
    d_model: usize,
    vocab_size: usize,
    max_positions: usize,
) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads: 2,
        d_model,
        vocab_size,
        d_ff: 2 * d_model,
        seed,
        max_positions,
    }
}

pub fn random_model(seed: u64, n_layers: usize) -> Model {
    Model::build(config(seed, n_layers, 16, 32, 32)).unwrap()
}

/// A visual prefix of `n_visual` Gaussian rows followed by `n_text` random ids.
pub fn random_input(
    model: &Model,
    rng: &mut ChaCha8Rng,
    n_visual: usize,
    n_text: usize,
) -> InputSequence {
    let d = model.d_model();
    let data: Vec<f32> = (0..n_visual * d)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let text: Vec<TokenId> = (0..n_text)
        .map(|_| rng.random_range(0..model.vocab_size() as TokenId))
        .collect();
    InputSequence::new(EmbeddingSet::new(d, data).unwrap(), text)
}

/// Bitwise equality of two f32 slices (distinguishes -0.0 and NaN payloads).
pub fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
