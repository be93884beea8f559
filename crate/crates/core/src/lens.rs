//! Logit lens over visual-token hidden states and the two per-layer metrics:
//! correspondence rate (fraction of positions whose decoded argmax is the
//! correct label) and answer probability (mean decoded probability of the
//! correct label).

use serde::{Deserialize, Serialize};

use crate::dump::ActivationDump;
use crate::error::{Error, Result};
use crate::geometry::{FrameGrid, TokenSet};
use crate::math::{self, Matrix};
use crate::model::{ForwardTrace, InputSequence, Model};
use crate::TokenId;

/// Anything that maps a residual-stream vector to vocabulary logits.
pub trait Unembed {
    fn width(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn logits(&self, h: &[f32]) -> Result<Vec<f32>>;
}

impl Unembed for Model {
    fn width(&self) -> usize {
        self.d_model()
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn logits(&self, h: &[f32]) -> Result<Vec<f32>> {
        Model::logits(self, h)
    }
}

/// Stand-alone final norm + head, for decoding dumps without a full model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub norm_gain: Vec<f32>,
    /// `(vocab_size, width)`.
    pub head: Matrix,
    pub bias: Vec<f32>,
}

impl LinearHead {
    pub fn from_model(model: &Model) -> Self {
        Self {
            norm_gain: model.final_norm.clone(),
            head: model.head.clone(),
            bias: model.head_bias.clone(),
        }
    }
}

impl Unembed for LinearHead {
    fn width(&self) -> usize {
        self.head.cols
    }

    fn vocab_size(&self) -> usize {
        self.head.rows
    }

    fn logits(&self, h: &[f32]) -> Result<Vec<f32>> {
        if h.len() != self.width() {
            return Err(Error::Shape(format!(
                "hidden width {} does not match head width {}",
                h.len(),
                self.width()
            )));
        }
        let n = math::rms_norm(h, &self.norm_gain);
        let mut out = self.head.matvec(&n);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        Ok(out)
    }
}

/// Layered residual states addressable by `(layer, position)`.
pub trait HiddenStates {
    /// Number of layer boundaries, `n_layers + 1`.
    fn n_boundaries(&self) -> usize;
    fn n_positions(&self) -> usize;
    fn state(&self, layer: usize, position: usize) -> &[f32];
}

impl HiddenStates for ForwardTrace {
    fn n_boundaries(&self) -> usize {
        self.n_layers() + 1
    }

    fn n_positions(&self) -> usize {
        self.seq_len()
    }

    fn state(&self, layer: usize, position: usize) -> &[f32] {
        self.hidden(layer, position)
    }
}

impl HiddenStates for ActivationDump {
    fn n_boundaries(&self) -> usize {
        self.n_slabs()
    }

    fn n_positions(&self) -> usize {
        self.n_tokens()
    }

    fn state(&self, layer: usize, position: usize) -> &[f32] {
        self.hidden(layer, position)
    }
}

// ---------------------------------------------------------------------------
// TraceRecord
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensCell {
    /// `(token, probability)`, descending by logit, ties to the lower id.
    pub top: Vec<(TokenId, f32)>,
    /// Probability of the record's designated correct token.
    pub p_correct: Option<f32>,
}

impl LensCell {
    pub fn top1(&self) -> TokenId {
        self.top[0].0
    }
}

/// Lens readout for a set of positions at every layer boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n_boundaries: usize,
    pub positions: TokenSet,
    pub k: usize,
    pub correct: Option<TokenId>,
    /// Layer-major: `cells[layer * positions.len() + j]`.
    pub cells: Vec<LensCell>,
}

impl TraceRecord {
    pub fn cell(&self, layer: usize, position: usize) -> Option<&LensCell> {
        let j = self.positions.as_slice().binary_search(&position).ok()?;
        if layer >= self.n_boundaries {
            return None;
        }
        self.cells.get(layer * self.positions.len() + j)
    }

    fn require_cell(&self, layer: usize, position: usize) -> Result<&LensCell> {
        self.cell(layer, position).ok_or_else(|| {
            Error::Input(format!(
                "no lens cell for layer {layer}, position {position}"
            ))
        })
    }
}

/// Runs one forward pass and decodes `positions` (all inside the visual
/// prefix) at every layer boundary.
pub fn trace(
    model: &Model,
    input: &InputSequence,
    positions: &TokenSet,
    k: usize,
    correct: Option<TokenId>,
) -> Result<TraceRecord> {
    if let Some(m) = positions.max() {
        if m >= input.visual.len() {
            return Err(Error::Input(format!(
                "lens position {m} is outside the visual prefix of {} tokens",
                input.visual.len()
            )));
        }
    }
    let fwd = model.forward(input, None)?;
    trace_states(model, &fwd, positions, k, correct)
}

/// Lens readout over any layered hidden states, e.g. an ingested dump.
pub fn trace_states<U: Unembed, H: HiddenStates>(
    head: &U,
    states: &H,
    positions: &TokenSet,
    k: usize,
    correct: Option<TokenId>,
) -> Result<TraceRecord> {
    let vocab = head.vocab_size();
    if k == 0 || k > vocab {
        return Err(Error::config(
            "circuit2.k",
            format!("k must be in 1..={vocab}, got {k}"),
        ));
    }
    if let Some(c) = correct {
        if c as usize >= vocab {
            return Err(Error::Input(format!(
                "correct token {c} outside vocabulary"
            )));
        }
    }
    if let Some(m) = positions.max() {
        if m >= states.n_positions() {
            return Err(Error::Input(format!(
                "position {m} out of range for {} positions",
                states.n_positions()
            )));
        }
    }
    let n_boundaries = states.n_boundaries();
    let mut cells = Vec::with_capacity(n_boundaries * positions.len());
    for layer in 0..n_boundaries {
        for p in positions.iter() {
            let logits = head.logits(states.state(layer, p))?;
            let probs = math::softmax(&logits);
            let top = math::top_k(&logits, k)
                .into_iter()
                .map(|t| (t as TokenId, probs[t]))
                .collect();
            cells.push(LensCell {
                top,
                p_correct: correct.map(|c| probs[c as usize]),
            });
        }
    }
    Ok(TraceRecord {
        n_boundaries,
        positions: positions.clone(),
        k,
        correct,
        cells,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn check_positions(record: &TraceRecord, layer: usize, positions: &TokenSet) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::Input("metric needs at least one position".into()));
    }
    if layer >= record.n_boundaries {
        return Err(Error::Input(format!(
            "layer {layer} out of range for {} boundaries",
            record.n_boundaries
        )));
    }
    Ok(())
}

/// Fraction of `positions` whose lens argmax at `layer` is `correct`.
pub fn correspondence_rate(
    record: &TraceRecord,
    layer: usize,
    correct: TokenId,
    positions: &TokenSet,
) -> Result<f64> {
    check_positions(record, layer, positions)?;
    let mut hits = 0usize;
    for p in positions.iter() {
        if record.require_cell(layer, p)?.top1() == correct {
            hits += 1;
        }
    }
    Ok(hits as f64 / positions.len() as f64)
}

/// Mean lens probability of `correct` over `positions` at `layer`.
pub fn answer_probability(
    record: &TraceRecord,
    layer: usize,
    correct: TokenId,
    positions: &TokenSet,
) -> Result<f64> {
    check_positions(record, layer, positions)?;
    if record.correct != Some(correct) {
        return Err(Error::Input(format!(
            "record tracks probabilities for {:?}, not token {correct}",
            record.correct
        )));
    }
    let mut sum = 0.0f64;
    for p in positions.iter() {
        let cell = record.require_cell(layer, p)?;
        sum += f64::from(cell.p_correct.expect("record has a correct token"));
    }
    Ok(sum / positions.len() as f64)
}

/// `C_R` and `A_P` at every layer boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetricSeries {
    pub positions: TokenSet,
    pub correspondence_rate: Vec<f64>,
    pub answer_probability: Vec<f64>,
}

impl LayerMetricSeries {
    pub fn from_record(
        record: &TraceRecord,
        correct: TokenId,
        positions: &TokenSet,
    ) -> Result<Self> {
        let mut cr = Vec::with_capacity(record.n_boundaries);
        let mut ap = Vec::with_capacity(record.n_boundaries);
        for layer in 0..record.n_boundaries {
            cr.push(correspondence_rate(record, layer, correct, positions)?);
            ap.push(answer_probability(record, layer, correct, positions)?);
        }
        Ok(Self {
            positions: positions.clone(),
            correspondence_rate: cr,
            answer_probability: ap,
        })
    }

    pub fn n_boundaries(&self) -> usize {
        self.correspondence_rate.len()
    }

    /// `layer,C_R,A_P` with one row per boundary.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,C_R,A_P\n");
        for (l, (c, a)) in self
            .correspondence_rate
            .iter()
            .zip(&self.answer_probability)
            .enumerate()
        {
            out.push_str(&format!("{l},{c:.6},{a:.6}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Temporal summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame: usize,
    pub position: usize,
    pub top: Vec<(TokenId, f32)>,
}

/// Final-layer top-k at the same `(row, col)` as `position` in every frame.
pub fn temporal_summary(
    record: &TraceRecord,
    grid: &FrameGrid,
    position: usize,
) -> Result<Vec<FrameSummary>> {
    if position >= grid.len() {
        return Err(Error::Input(format!(
            "position {position} outside a grid of {} tokens",
            grid.len()
        )));
    }
    let (_, row, col) = grid.coords(position);
    let last = record.n_boundaries - 1;
    (0..grid.frames)
        .map(|frame| {
            let p = grid.flat(frame, row, col);
            Ok(FrameSummary {
                frame,
                position: p,
                top: record.require_cell(last, p)?.top.clone(),
            })
        })
        .collect()
}
