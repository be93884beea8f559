use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{InputSequence, Model};
use crate::error::{Error, Result};
use crate::intervention::InterventionSpec;
use crate::math::{self, dot};

/// One attention edge `source -> target` removed in `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KnockoutEdge {
    pub layer: usize,
    pub source: usize,
    pub target: usize,
}

/// Residual stream at every layer boundary plus final logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    seq_len: usize,
    d_model: usize,
    vocab_size: usize,
    /// `n_layers + 1` buffers of `(seq_len, d_model)`; index 0 is post-embedding.
    hidden: Vec<Vec<f32>>,
    /// `(seq_len, vocab_size)` pre-softmax.
    logits: Vec<f32>,
    /// Causal edges that a knockout actually removed, sorted.
    pub knocked_out: Vec<KnockoutEdge>,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() - 1
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// `h_i^(l)`: residual stream entering layer `l` (or leaving the last
    /// layer when `l == n_layers`).
    pub fn hidden(&self, layer: usize, position: usize) -> &[f32] {
        let d = self.d_model;
        &self.hidden[layer][position * d..(position + 1) * d]
    }

    pub fn hidden_layer(&self, layer: usize) -> &[f32] {
        &self.hidden[layer]
    }

    pub fn logits(&self, position: usize) -> &[f32] {
        let v = self.vocab_size;
        &self.logits[position * v..(position + 1) * v]
    }

    pub fn last_logits(&self) -> Option<&[f32]> {
        self.seq_len.checked_sub(1).map(|i| self.logits(i))
    }
}

/// Per-layer view of knockout masks: target -> blocked source flags.
type LayerMask = BTreeMap<usize, Vec<bool>>;

/// Keys and values of every position at one layer, `(seq_len, d_model)` each.
#[derive(Debug, Clone, PartialEq)]
struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
}

/// An unintervened forward pass together with its per-layer keys and values,
/// from which intervened passes on the same input can be resumed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    trace: ForwardTrace,
    kv: Vec<LayerKv>,
}

impl ForwardCache {
    pub fn trace(&self) -> &ForwardTrace {
        &self.trace
    }
}

/// First layer and first position an intervention can influence.
fn dirty_region(spec: &InterventionSpec) -> Option<(usize, usize)> {
    match spec {
        InterventionSpec::None => None,
        InterventionSpec::Ablation { tokens, .. } | InterventionSpec::Injection { tokens, .. } => {
            tokens.iter().next().map(|first| (0, first))
        }
        InterventionSpec::Knockout { masks } => masks
            .iter()
            .filter(|m| !m.sources.is_empty() && !m.layers.is_empty())
            .map(|m| (m.layers.start, m.target))
            .reduce(|(l, t), (l2, t2)| (l.min(l2), t.min(t2))),
    }
}

impl Model {
    /// Runs the full causal forward pass, recording the residual stream at
    /// every layer boundary.
    ///
    /// Ablation and injection payloads overwrite input rows before positional
    /// embeddings are added. Knockout masks set the pre-softmax score of each
    /// blocked `source -> target` edge to `f32::MIN` in every head of the
    /// masked layers; a query whose every causal source is blocked reads
    /// nothing.
    pub fn forward(
        &self,
        input: &InputSequence,
        spec: Option<&InterventionSpec>,
    ) -> Result<ForwardTrace> {
        let spec = spec.unwrap_or(&InterventionSpec::None);
        Ok(self.run(input, spec)?.0)
    }

    /// Unintervened forward pass that keeps what [`Model::forward_resumed`]
    /// needs.
    pub fn forward_cached(&self, input: &InputSequence) -> Result<ForwardCache> {
        let (trace, kv) = self.run(input, &InterventionSpec::None)?;
        Ok(ForwardCache { trace, kv })
    }

    /// Same result as `forward(input, Some(spec))`, bit for bit, but layers
    /// and positions the intervention cannot reach are copied from `cache`
    /// instead of recomputed. By causality, an intervention whose earliest
    /// touched position is `p` leaves every position before `p` unchanged,
    /// and a knockout starting at layer `a` leaves layers up to `a` unchanged.
    pub fn forward_resumed(
        &self,
        cache: &ForwardCache,
        input: &InputSequence,
        spec: &InterventionSpec,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let seq_len = input.len();
        let base = &cache.trace;
        if base.seq_len != seq_len
            || base.d_model != d
            || base.n_layers() != cfg.n_layers
            || cache.kv.len() != cfg.n_layers
        {
            return Err(Error::Input(
                "forward cache does not match this model and input".into(),
            ));
        }
        let x0 = self.embed(input, spec)?;
        let Some((from_layer, from_row)) = dirty_region(spec) else {
            if x0 != base.hidden[0] {
                return Err(Error::Input(
                    "forward cache was computed for a different input".into(),
                ));
            }
            return Ok(ForwardTrace {
                knocked_out: Vec::new(),
                ..base.clone()
            });
        };
        if x0[..from_row * d] != base.hidden[0][..from_row * d] {
            return Err(Error::Input(
                "forward cache was computed for a different input".into(),
            ));
        }

        let masks = layer_masks(spec, cfg.n_layers, seq_len);
        let mut hidden = Vec::with_capacity(cfg.n_layers + 1);
        hidden.push(x0);
        for (layer, block) in self.blocks.iter().enumerate() {
            if layer < from_layer {
                hidden.push(base.hidden[layer + 1].clone());
                continue;
            }
            let h = hidden.last().expect("at least the embedding layer");
            let (rows, _) =
                self.block_forward(block, h, from_row, Some(&cache.kv[layer]), &masks[layer]);
            let mut next = Vec::with_capacity(seq_len * d);
            next.extend_from_slice(&base.hidden[layer + 1][..from_row * d]);
            next.extend(rows);
            hidden.push(next);
        }

        let v = cfg.vocab_size;
        let mut logits = Vec::with_capacity(seq_len * v);
        logits.extend_from_slice(&base.logits[..from_row * v]);
        let last = hidden.last().expect("non-empty");
        for row in last[from_row * d..].chunks_exact(d) {
            logits.extend(self.logits_unchecked(row));
        }
        Ok(ForwardTrace {
            seq_len,
            d_model: d,
            vocab_size: v,
            hidden,
            logits,
            knocked_out: knocked_out_edges(&masks),
        })
    }

    /// Validated, intervened input rows plus positional embeddings.
    fn embed(&self, input: &InputSequence, spec: &InterventionSpec) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let seq_len = input.len();
        if seq_len > cfg.max_positions {
            return Err(Error::Input(format!(
                "sequence of {seq_len} tokens exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        spec.validate(seq_len, cfg.n_layers, d, cfg.vocab_size)?;

        let mut x = self.assemble_input(&input.visual, &input.text)?;
        match spec {
            InterventionSpec::Ablation {
                tokens,
                replacement,
            } => {
                for i in tokens.iter() {
                    x[i * d..(i + 1) * d].copy_from_slice(replacement);
                }
            }
            InterventionSpec::Injection { tokens, label } => {
                for (k, i) in tokens.iter().enumerate() {
                    let row = self.embedding_row(label[k % label.len()])?;
                    x[i * d..(i + 1) * d].copy_from_slice(row);
                }
            }
            InterventionSpec::None | InterventionSpec::Knockout { .. } => {}
        }
        for (i, row) in x.chunks_exact_mut(d).enumerate() {
            for (v, p) in row.iter_mut().zip(self.position_embedding.row(i)) {
                *v += p;
            }
        }
        Ok(x)
    }

    fn run(
        &self,
        input: &InputSequence,
        spec: &InterventionSpec,
    ) -> Result<(ForwardTrace, Vec<LayerKv>)> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let seq_len = input.len();
        let x = self.embed(input, spec)?;

        let masks = layer_masks(spec, cfg.n_layers, seq_len);
        let mut kvs = Vec::with_capacity(cfg.n_layers);
        let mut hidden = Vec::with_capacity(cfg.n_layers + 1);
        hidden.push(x);
        for (layer, block) in self.blocks.iter().enumerate() {
            let h = hidden.last().expect("at least the embedding layer");
            let (next, kv) = self.block_forward(block, h, 0, None, &masks[layer]);
            kvs.push(kv);
            hidden.push(next);
        }

        let last = hidden.last().expect("non-empty");
        let mut logits = Vec::with_capacity(seq_len * cfg.vocab_size);
        for row in last.chunks_exact(d) {
            logits.extend(self.logits_unchecked(row));
        }

        let trace = ForwardTrace {
            seq_len,
            d_model: d,
            vocab_size: cfg.vocab_size,
            hidden,
            logits,
            knocked_out: knocked_out_edges(&masks),
        };
        Ok((trace, kvs))
    }

    /// One decoder block for positions `from..seq_len`. Keys and values of
    /// earlier positions come from `prior`, which must hold this layer's
    /// unintervened projections; with `from == 0` nothing is reused. Returns
    /// the new rows and the full key/value buffers.
    fn block_forward(
        &self,
        block: &super::Block,
        h: &[f32],
        from: usize,
        prior: Option<&LayerKv>,
        mask: &LayerMask,
    ) -> (Vec<f32>, LayerKv) {
        let cfg = &self.config;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let seq_len = h.len() / d;

        let mut q = Vec::with_capacity((seq_len - from) * d);
        let mut k = Vec::with_capacity(seq_len * d);
        let mut v = Vec::with_capacity(seq_len * d);
        if from > 0 {
            let prior = prior.expect("reused rows need cached keys and values");
            k.extend_from_slice(&prior.k[..from * d]);
            v.extend_from_slice(&prior.v[..from * d]);
        }
        for row in h[from * d..].chunks_exact(d) {
            let n = math::rms_norm(row, &block.attn_norm);
            q.extend(block.w_q.matvec(&n));
            k.extend(block.w_k.matvec(&n));
            v.extend(block.w_v.matvec(&n));
        }

        let mut out = h[from * d..].to_vec();
        let mut scores = Vec::with_capacity(seq_len);
        for i in from..seq_len {
            let r = i - from;
            let blocked = mask.get(&i);
            let all_blocked = blocked.is_some_and(|b| b[..=i].iter().all(|&x| x));
            let mut mixed = vec![0.0f32; d];
            if !all_blocked {
                for head in 0..cfg.n_heads {
                    let off = head * hd;
                    let qi = &q[r * d + off..r * d + off + hd];
                    scores.clear();
                    for j in 0..=i {
                        let s = if blocked.is_some_and(|b| b[j]) {
                            f32::MIN
                        } else {
                            dot(qi, &k[j * d + off..j * d + off + hd]) * scale
                        };
                        scores.push(s);
                    }
                    let weights = math::softmax(&scores);
                    let slot = &mut mixed[off..off + hd];
                    for (j, &w) in weights.iter().enumerate() {
                        let vj = &v[j * d + off..j * d + off + hd];
                        for (m, &vv) in slot.iter_mut().zip(vj) {
                            *m += w * vv;
                        }
                    }
                }
            }
            let attn = block.w_o.matvec(&mixed);
            for (o, a) in out[r * d..(r + 1) * d].iter_mut().zip(attn) {
                *o += a;
            }
        }

        for row in out.chunks_exact_mut(d) {
            let n = math::rms_norm(row, &block.mlp_norm);
            let mut up = block.w_up.matvec(&n);
            for u in &mut up {
                *u = math::gelu(*u);
            }
            let down = block.w_down.matvec(&up);
            for (o, dd) in row.iter_mut().zip(down) {
                *o += dd;
            }
        }
        (out, LayerKv { k, v })
    }
}

/// Causal edges removed by the masks, sorted by layer, then target, then source.
fn knocked_out_edges(masks: &[LayerMask]) -> Vec<KnockoutEdge> {
    let mut edges = Vec::new();
    for (layer, mask) in masks.iter().enumerate() {
        for (&target, blocked) in mask {
            edges.extend(
                blocked
                    .iter()
                    .enumerate()
                    .take(target + 1)
                    .filter(|(_, &b)| b)
                    .map(|(source, _)| KnockoutEdge {
                        layer,
                        source,
                        target,
                    }),
            );
        }
    }
    edges
}

fn layer_masks(spec: &InterventionSpec, n_layers: usize, seq_len: usize) -> Vec<LayerMask> {
    let mut out = vec![LayerMask::new(); n_layers];
    if let InterventionSpec::Knockout { masks } = spec {
        for m in masks {
            if m.sources.is_empty() {
                continue;
            }
            for layer_mask in &mut out[m.layers.start..m.layers.end] {
                let flags = layer_mask
                    .entry(m.target)
                    .or_insert_with(|| vec![false; seq_len]);
                for s in m.sources.iter() {
                    flags[s] = true;
                }
            }
        }
    }
    out
}
