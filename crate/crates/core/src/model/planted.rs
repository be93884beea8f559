//! Hand-constructed models with known circuits.
//!
//! [`identity_model`] is a pure pass-through: one-hot embeddings, zero mixing
//! weights and an identity head, so every layer decodes to the input token.
//!
//! [`planted_qa_model`] wires a small question-answering circuit into
//! otherwise zero weights, using the toy [`Vocab`]:
//!
//! * read layer, head 0: text queries attend uniformly to the visual prefix
//!   and copy its label coordinates into a summary subspace `S`. The head maps
//!   `S` back onto label logits, so open questions answer with the label that
//!   dominates the visual tokens.
//! * read layer, head 1: text queries attend to the question's object slot
//!   (text offset 3, where "Is there a/an X" puts `X`) and copy its label into
//!   a query subspace `Q`.
//! * verify layer, head 0: the query `Q` is matched against the label
//!   coordinates of every visual token, against a fixed-score sink on text
//!   positions. The value is a visual-region flag, so the `yes` channel fills
//!   up only when some visual token carries the asked-about label.
//!
//! Residual layout (token ids index the first `vocab_size` channels):
//!
//! ```text
//! [0, V)            one-hot token identity
//! [V, V+K)          S  visual label summary
//! [V+K, V+2K)       Q  question object
//! V+2K              text-region flag (positional)
//! V+2K+1            visual-region flag (positional)
//! V+2K+2            object-slot flag (positional)
//! V+2K+3            yes evidence
//! ```

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::vocab::{Vocab, NO, YES};

/// Text offset of the object word in "Is there a/an X in this video ?".
pub const OBJECT_SLOT: usize = 3;

const SUMMARY_GAIN: f32 = 60.0;
const YES_GAIN: f32 = 5.0;
const YES_THRESHOLD: f32 = 0.4;
const TEXT_GATE: f32 = 2.0;
const SLOT_GATE: f32 = 3.0;
const MATCH_GAIN: f32 = 3.0;
const SINK_LEVEL: f32 = 0.5;
const WRITE_SCALE: f32 = 0.125;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    /// Number of visual prefix positions the circuit is wired for.
    pub n_visual: usize,
    pub max_text: usize,
    /// Layer holding the summary and question-object heads.
    pub read_layer: usize,
    /// Layer holding the presence check.
    pub verify_layer: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 128,
            vocab_size: 64,
            n_visual: 256,
            max_text: 32,
            read_layer: 3,
            verify_layer: 5,
        }
    }
}

struct Layout {
    summary: usize,
    query: usize,
    text_flag: usize,
    visual_flag: usize,
    slot_flag: usize,
    yes: usize,
}

impl PlantedConfig {
    fn layout(&self, n_labels: usize) -> Layout {
        let v = self.vocab_size;
        Layout {
            summary: v,
            query: v + n_labels,
            text_flag: v + 2 * n_labels,
            visual_flag: v + 2 * n_labels + 1,
            slot_flag: v + 2 * n_labels + 2,
            yes: v + 2 * n_labels + 3,
        }
    }

    fn validate(&self, n_labels: usize) -> Result<()> {
        let need = self.vocab_size + 2 * n_labels + 4;
        if self.d_model < need || !self.d_model.is_multiple_of(2) {
            return Err(Error::config(
                "model.d_model",
                format!("planted model needs an even d_model of at least {need}"),
            ));
        }
        if self.d_model / 2 < n_labels + 1 {
            return Err(Error::config(
                "model.d_model",
                "head width too small for the label set",
            ));
        }
        if !(self.read_layer < self.verify_layer && self.verify_layer < self.n_layers) {
            return Err(Error::config(
                "model.verify_layer",
                "need read_layer < verify_layer < n_layers",
            ));
        }
        if self.max_text <= OBJECT_SLOT {
            return Err(Error::config(
                "model.max_text",
                "too short for the question templates",
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: 2,
            d_model: self.d_model,
            vocab_size: self.vocab_size,
            d_ff: 1,
            seed: 0,
            max_positions: self.n_visual + self.max_text,
        }
    }
}

/// One-hot pass-through model: `d_model >= vocab_size`, embedding row `t` is
/// `e_t`, the head is the identity on the first `vocab_size` channels and all
/// attention and MLP weights are zero.
pub fn identity_model(
    n_layers: usize,
    vocab_size: usize,
    d_model: usize,
    max_positions: usize,
) -> Result<Model> {
    if d_model < vocab_size {
        return Err(Error::config(
            "model.d_model",
            format!("identity model needs d_model >= vocab_size ({d_model} < {vocab_size})"),
        ));
    }
    let mut m = Model::zeros(ModelConfig {
        n_layers,
        n_heads: 1,
        d_model,
        vocab_size,
        d_ff: 1,
        seed: 0,
        max_positions,
    })?;
    for t in 0..vocab_size {
        m.token_embedding.set(t, t, 1.0);
        m.head.set(t, t, 1.0);
    }
    Ok(m)
}

/// Builds the planted question-answering model described in the module docs.
pub fn planted_qa_model(cfg: &PlantedConfig, vocab: &Vocab) -> Result<Model> {
    if vocab.len() != cfg.vocab_size {
        return Err(Error::config(
            "model.vocab_size",
            format!(
                "vocabulary has {} tokens, config says {}",
                vocab.len(),
                cfg.vocab_size
            ),
        ));
    }
    let labels = vocab.labels();
    let k = labels.len();
    cfg.validate(k)?;
    let lay = cfg.layout(k);
    let hd = cfg.d_model / 2;

    let mut m = identity_model(
        cfg.n_layers,
        cfg.vocab_size,
        cfg.d_model,
        cfg.n_visual + cfg.max_text,
    )?;
    m.config = cfg.model_config();
    m.blocks = Model::zeros(m.config.clone())?.blocks;

    for pos in 0..m.config.max_positions {
        if pos < cfg.n_visual {
            m.position_embedding.set(pos, lay.visual_flag, 1.0);
        } else {
            m.position_embedding.set(pos, lay.text_flag, 1.0);
            if pos == cfg.n_visual + OBJECT_SLOT {
                m.position_embedding.set(pos, lay.slot_flag, 1.0);
            }
        }
    }

    let read = &mut m.blocks[cfg.read_layer];
    // head 0: text queries see only the visual prefix, values are label coordinates.
    read.w_q.set(0, lay.text_flag, TEXT_GATE);
    read.w_k.set(0, lay.text_flag, -TEXT_GATE);
    // head 1: text queries lock onto the object slot.
    read.w_q.set(hd, lay.text_flag, SLOT_GATE);
    read.w_k.set(hd, lay.slot_flag, SLOT_GATE);
    for (i, &t) in labels.iter().enumerate() {
        let t = t as usize;
        read.w_v.set(i, t, 1.0);
        read.w_o.set(lay.summary + i, i, WRITE_SCALE);
        read.w_v.set(hd + i, t, 1.0);
        read.w_o.set(lay.query + i, hd + i, WRITE_SCALE);
    }

    let verify = &mut m.blocks[cfg.verify_layer];
    for (i, &t) in labels.iter().enumerate() {
        let t = t as usize;
        verify.w_q.set(i, lay.query + i, MATCH_GAIN);
        verify.w_k.set(i, t, MATCH_GAIN);
        // the slot token's own label cancels against its slot flag
        verify.w_k.set(i, lay.slot_flag, -MATCH_GAIN);
    }
    verify.w_q.set(k, lay.text_flag, MATCH_GAIN);
    verify.w_k.set(k, lay.text_flag, MATCH_GAIN * SINK_LEVEL);
    verify.w_v.set(0, lay.visual_flag, 1.0);
    verify.w_o.set(lay.yes, 0, WRITE_SCALE);

    for (i, &t) in labels.iter().enumerate() {
        m.head.set(t as usize, lay.summary + i, SUMMARY_GAIN);
    }
    m.head.set(YES as usize, lay.yes, YES_GAIN);
    m.head
        .set(NO as usize, lay.text_flag, YES_GAIN * YES_THRESHOLD);
    Ok(m)
}
