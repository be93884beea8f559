//! Declarative interventions: mean-embedding ablation, text injection and
//! windowed attention knockout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, Provenance};
use crate::error::{Error, Result};
use crate::geometry::TokenSet;
use crate::model::Model;
use crate::TokenId;

// ---------------------------------------------------------------------------
// Layer windows
// ---------------------------------------------------------------------------

/// Half-open range of decoder layers `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.start..self.end).contains(&layer)
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Early,
    EarlyMid,
    Mid,
    MidLate,
    Late,
    All,
}

impl Window {
    /// The five windows followed by the `All` pseudo-window.
    pub const ALL_COLUMNS: [Window; 6] = [
        Window::Early,
        Window::EarlyMid,
        Window::Mid,
        Window::MidLate,
        Window::Late,
        Window::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Window::Early => "early",
            Window::EarlyMid => "early_mid",
            Window::Mid => "mid",
            Window::MidLate => "mid_late",
            Window::Late => "late",
            Window::All => "all",
        }
    }

    /// Column title used in reports.
    pub fn title(self) -> &'static str {
        match self {
            Window::Early => "Early",
            Window::EarlyMid => "Early-Mid",
            Window::Mid => "Mid",
            Window::MidLate => "Mid-Late",
            Window::Late => "Late",
            Window::All => "All Layers",
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Window::ALL_COLUMNS
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::config("window", format!("unknown layer window `{s}`")))
    }
}

/// Five contiguous near-equal layer windows covering `[0, n_layers)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerWindows {
    n_layers: usize,
    ranges: [LayerRange; 5],
}

impl LayerWindows {
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// The five proper windows, early to late.
    pub fn ranges(&self) -> &[LayerRange; 5] {
        &self.ranges
    }

    pub fn range(&self, window: Window) -> LayerRange {
        match window {
            Window::Early => self.ranges[0],
            Window::EarlyMid => self.ranges[1],
            Window::Mid => self.ranges[2],
            Window::MidLate => self.ranges[3],
            Window::Late => self.ranges[4],
            Window::All => LayerRange::new(0, self.n_layers),
        }
    }
}

/// Splits `n_layers` into five windows whose sizes differ by at most one,
/// handing the remainder to the earliest windows.
pub fn partition_layers(n_layers: usize) -> Result<LayerWindows> {
    if n_layers < 5 {
        return Err(Error::config(
            "n_layers",
            format!("need at least 5 layers to form five windows, got {n_layers}"),
        ));
    }
    let base = n_layers / 5;
    let rem = n_layers % 5;
    let mut ranges = [LayerRange::new(0, 0); 5];
    let mut start = 0;
    for (i, r) in ranges.iter_mut().enumerate() {
        let size = base + usize::from(i < rem);
        *r = LayerRange::new(start, start + size);
        start += size;
    }
    Ok(LayerWindows { n_layers, ranges })
}

// ---------------------------------------------------------------------------
// InterventionSpec
// ---------------------------------------------------------------------------

/// Blocks attention from every source in `sources` to `target` for all heads
/// of every layer in `layers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnockoutMask {
    pub sources: TokenSet,
    pub target: usize,
    pub layers: LayerRange,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterventionSpec {
    #[default]
    None,
    /// Replace the input rows at `tokens` with `replacement`.
    Ablation {
        tokens: TokenSet,
        replacement: Vec<f32>,
    },
    /// Replace the input rows at `tokens` with label embeddings, tiled cyclically.
    Injection {
        tokens: TokenSet,
        label: Vec<TokenId>,
    },
    /// Union of knockout masks applied in the same forward pass.
    Knockout { masks: Vec<KnockoutMask> },
}

impl InterventionSpec {
    pub fn ablation(tokens: TokenSet, replacement: Vec<f32>) -> Self {
        InterventionSpec::Ablation {
            tokens,
            replacement,
        }
    }

    pub fn injection(tokens: TokenSet, label: Vec<TokenId>) -> Self {
        InterventionSpec::Injection { tokens, label }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, InterventionSpec::None)
    }

    /// Merges knockout specs into one spec whose mask set is the union.
    /// `None` entries are skipped; other kinds are rejected.
    pub fn union_knockouts(specs: impl IntoIterator<Item = InterventionSpec>) -> Result<Self> {
        let mut masks = Vec::new();
        for spec in specs {
            match spec {
                InterventionSpec::None => {}
                InterventionSpec::Knockout { masks: m } => masks.extend(m),
                other => {
                    return Err(Error::Intervention(format!(
                        "only knockout specs can be merged, got {}",
                        other.kind_name()
                    )))
                }
            }
        }
        Ok(InterventionSpec::Knockout { masks })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            InterventionSpec::None => "none",
            InterventionSpec::Ablation { .. } => "ablation",
            InterventionSpec::Injection { .. } => "injection",
            InterventionSpec::Knockout { .. } => "knockout",
        }
    }

    /// Checks every referenced position and layer against a concrete input.
    pub fn validate(
        &self,
        seq_len: usize,
        n_layers: usize,
        d_model: usize,
        vocab: usize,
    ) -> Result<()> {
        match self {
            InterventionSpec::None => Ok(()),
            InterventionSpec::Ablation {
                tokens,
                replacement,
            } => {
                tokens.check_bounds(seq_len)?;
                if replacement.len() != d_model {
                    return Err(Error::Shape(format!(
                        "replacement width {} does not match d_model {d_model}",
                        replacement.len()
                    )));
                }
                Ok(())
            }
            InterventionSpec::Injection { tokens, label } => {
                tokens.check_bounds(seq_len)?;
                if label.is_empty() {
                    return Err(Error::Input("injection label is empty".into()));
                }
                if let Some(&bad) = label.iter().find(|&&t| t as usize >= vocab) {
                    return Err(Error::Intervention(format!(
                        "label token {bad} out of range for vocabulary of {vocab}"
                    )));
                }
                Ok(())
            }
            InterventionSpec::Knockout { masks } => {
                for m in masks {
                    if m.target >= seq_len {
                        return Err(Error::Intervention(format!(
                            "knockout target {} out of range for {seq_len} positions",
                            m.target
                        )));
                    }
                    m.sources.check_bounds(seq_len)?;
                    if m.layers.start > m.layers.end || m.layers.end > n_layers {
                        return Err(Error::Intervention(format!(
                            "knockout layers {} out of range for {n_layers} layers",
                            m.layers
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Builds a knockout of `sources -> target` over one named window.
pub fn build_knockout(
    windows: &LayerWindows,
    which: Window,
    sources: TokenSet,
    target: usize,
) -> InterventionSpec {
    InterventionSpec::Knockout {
        masks: vec![KnockoutMask {
            sources,
            target,
            layers: windows.range(which),
        }],
    }
}

/// [`build_knockout`] with the window given by name.
pub fn build_knockout_named(
    windows: &LayerWindows,
    which: &str,
    sources: TokenSet,
    target: usize,
) -> Result<InterventionSpec> {
    Ok(build_knockout(windows, which.parse()?, sources, target))
}

// ---------------------------------------------------------------------------
// Embedding-level payloads
// ---------------------------------------------------------------------------

/// Arithmetic mean of every token vector in the corpus, accumulated in f64.
pub fn mean_embedding(corpus: &[EmbeddingSet]) -> Result<Vec<f32>> {
    let first = corpus
        .iter()
        .find(|s| !s.is_empty())
        .ok_or_else(|| Error::Input("mean embedding needs a non-empty corpus".into()))?;
    let width = first.width();
    let mut sum = vec![0.0f64; width];
    let mut count = 0usize;
    for set in corpus {
        if set.is_empty() {
            continue;
        }
        if set.width() != width {
            return Err(Error::Shape(format!(
                "corpus mixes widths {width} and {}",
                set.width()
            )));
        }
        for row in set.rows() {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        count += set.len();
    }
    Ok(sum.into_iter().map(|s| (s / count as f64) as f32).collect())
}

/// Rows in `tokens` replaced by `replacement`; everything else untouched.
pub fn ablate(
    visual: &EmbeddingSet,
    tokens: &TokenSet,
    replacement: &[f32],
) -> Result<EmbeddingSet> {
    tokens.check_bounds(visual.len())?;
    if !tokens.is_empty() && replacement.len() != visual.width() {
        return Err(Error::Shape(format!(
            "replacement width {} does not match embedding width {}",
            replacement.len(),
            visual.width()
        )));
    }
    let mut out = visual.clone();
    for i in tokens.iter() {
        out.set_row(i, replacement, Provenance::Ablated);
    }
    Ok(out)
}

/// Rows in `tokens` (ascending) receive `label[k mod len]` embeddings.
pub fn inject_text(
    visual: &EmbeddingSet,
    tokens: &TokenSet,
    label: &[TokenId],
    model: &Model,
) -> Result<EmbeddingSet> {
    if label.is_empty() {
        return Err(Error::Input("injection label is empty".into()));
    }
    tokens.check_bounds(visual.len())?;
    if !tokens.is_empty() && visual.width() != model.d_model() {
        return Err(Error::Shape(format!(
            "embedding width {} does not match d_model {}",
            visual.width(),
            model.d_model()
        )));
    }
    let mut out = visual.clone();
    for (k, i) in tokens.iter().enumerate() {
        let t = label[k % label.len()];
        out.set_row(i, model.embedding_row(t)?, Provenance::Injected(t));
    }
    Ok(out)
}
