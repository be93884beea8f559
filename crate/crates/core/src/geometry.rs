//! Spatiotemporal patch geometry and visual-token selection.
//!
//! A video prefix is `L` frames of `rows x cols` patches, flattened frame by
//! frame and row-major inside each frame. Everything here works in terms of
//! those flat indices: bounding boxes become [`TokenSet`]s, buffers are
//! Chebyshev dilations inside a frame, and register tokens are per-frame norm
//! outliers.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// FrameGrid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameGrid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl FrameGrid {
    pub fn new(frames: usize, rows: usize, cols: usize) -> Result<Self> {
        let grid = Self { frames, rows, cols };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.rows == 0 || self.cols == 0 {
            return Err(Error::config(
                "grid",
                format!(
                    "frames, rows and cols must be positive (got {}x{}x{})",
                    self.frames, self.rows, self.cols
                ),
            ));
        }
        Ok(())
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    /// Total number of visual tokens `N`.
    pub fn len(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, frame: usize, row: usize, col: usize) -> usize {
        frame * self.tokens_per_frame() + row * self.cols + col
    }

    /// Inverse of [`FrameGrid::flat`]: `(frame, row, col)`.
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let per = self.tokens_per_frame();
        let frame = index / per;
        let rem = index % per;
        (frame, rem / self.cols, rem % self.cols)
    }

    pub fn frame_tokens(&self, frame: usize) -> TokenSet {
        let per = self.tokens_per_frame();
        TokenSet((frame * per..(frame + 1) * per).collect())
    }

    pub fn all_tokens(&self) -> TokenSet {
        TokenSet((0..self.len()).collect())
    }
}

// ---------------------------------------------------------------------------
// TokenSet
// ---------------------------------------------------------------------------

/// Strictly increasing list of flat token indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct TokenSet(Vec<usize>);

impl TokenSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn union(&self, other: &TokenSet) -> TokenSet {
        TokenSet::new(self.iter().chain(other.iter()))
    }

    pub fn difference(&self, other: &TokenSet) -> TokenSet {
        TokenSet(self.iter().filter(|&i| !other.contains(i)).collect())
    }

    pub fn is_subset(&self, other: &TokenSet) -> bool {
        self.iter().all(|i| other.contains(i))
    }

    pub fn is_disjoint(&self, other: &TokenSet) -> bool {
        self.iter().all(|i| !other.contains(i))
    }

    /// `[0, n) \ self`.
    pub fn complement(&self, n: usize) -> TokenSet {
        TokenSet((0..n).filter(|&i| !self.contains(i)).collect())
    }

    /// Errors if any index is `>= n`.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        match self.max() {
            Some(m) if m >= n => Err(Error::Intervention(format!(
                "token index {m} out of range for {n} positions"
            ))),
            _ => Ok(()),
        }
    }
}

impl From<Vec<usize>> for TokenSet {
    fn from(v: Vec<usize>) -> Self {
        TokenSet::new(v)
    }
}

impl From<TokenSet> for Vec<usize> {
    fn from(s: TokenSet) -> Self {
        s.0
    }
}

impl FromIterator<usize> for TokenSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        TokenSet::new(iter)
    }
}

// ---------------------------------------------------------------------------
// BBox
// ---------------------------------------------------------------------------

/// Axis-aligned box in normalized frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub frame: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(frame: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if !(inside(x0) && inside(y0) && inside(x1) && inside(y1)) || x0 >= x1 || y0 >= y1 {
            return Err(Error::Input(format!(
                "invalid bbox ({x0}, {y0}, {x1}, {y1}); need 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            )));
        }
        Ok(Self {
            frame,
            x0,
            y0,
            x1,
            y1,
        })
    }
}

/// Tokens of `bbox.frame` whose patch cell overlaps the box with positive area.
///
/// Cells are half-open: column `c` spans `[c/cols, (c+1)/cols)`. A box that is
/// degenerate after clamping to the unit square yields an empty set.
pub fn bbox_to_tokens(grid: &FrameGrid, bbox: &BBox) -> Result<TokenSet> {
    if bbox.frame >= grid.frames {
        return Err(Error::Input(format!(
            "bbox frame {} out of range for {} frames",
            bbox.frame, grid.frames
        )));
    }
    let x0 = bbox.x0.clamp(0.0, 1.0);
    let x1 = bbox.x1.clamp(0.0, 1.0);
    let y0 = bbox.y0.clamp(0.0, 1.0);
    let y1 = bbox.y1.clamp(0.0, 1.0);
    if x1 <= x0 || y1 <= y0 {
        return Ok(TokenSet::empty());
    }

    let overlaps = |lo: f64, hi: f64, k: usize, n: usize| {
        let cell_lo = k as f64 / n as f64;
        let cell_hi = (k + 1) as f64 / n as f64;
        hi.min(cell_hi) - lo.max(cell_lo) > 0.0
    };

    let mut out = Vec::new();
    for r in 0..grid.rows {
        if !overlaps(y0, y1, r, grid.rows) {
            continue;
        }
        for c in 0..grid.cols {
            if overlaps(x0, x1, c, grid.cols) {
                out.push(grid.flat(bbox.frame, r, c));
            }
        }
    }
    Ok(TokenSet(out))
}

/// Chebyshev dilation by `radius` inside each token's own frame.
///
/// Indices outside the grid are ignored.
pub fn dilate(grid: &FrameGrid, set: &TokenSet, radius: usize) -> TokenSet {
    let mut out = Vec::new();
    for idx in set.iter().filter(|&i| i < grid.len()) {
        let (f, r, c) = grid.coords(idx);
        let r_lo = r.saturating_sub(radius);
        let r_hi = (r + radius).min(grid.rows - 1);
        let c_lo = c.saturating_sub(radius);
        let c_hi = (c + radius).min(grid.cols - 1);
        for rr in r_lo..=r_hi {
            for cc in c_lo..=c_hi {
                out.push(grid.flat(f, rr, cc));
            }
        }
    }
    TokenSet::new(out)
}

/// Tokens whose L2 norm exceeds `mean + 2 * std` of their own frame.
///
/// Uses the population standard deviation; a zero-variance frame yields no
/// registers.
pub fn detect_registers(embeddings: &EmbeddingSet, grid: &FrameGrid) -> Result<TokenSet> {
    if embeddings.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for a grid of {} tokens",
            embeddings.len(),
            grid.len()
        )));
    }
    let norms = embeddings.row_norms();
    let per = grid.tokens_per_frame();
    let mut out = Vec::new();
    for (f, frame_norms) in norms.chunks_exact(per).enumerate() {
        let n = frame_norms.len() as f64;
        let mean = frame_norms.iter().sum::<f64>() / n;
        let var = frame_norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let threshold = mean + 2.0 * var.sqrt();
        out.extend(
            frame_norms
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > threshold)
                .map(|(i, _)| f * per + i),
        );
    }
    Ok(TokenSet(out))
}

/// Uniform sample of `n` distinct tokens from `[0, N) \ exclude`.
pub fn sample_random(
    grid: &FrameGrid,
    n: usize,
    seed: u64,
    exclude: Option<&TokenSet>,
) -> Result<TokenSet> {
    let pool: Vec<usize> = match exclude {
        Some(ex) => (0..grid.len()).filter(|&i| !ex.contains(i)).collect(),
        None => (0..grid.len()).collect(),
    };
    if n > pool.len() {
        return Err(Error::Capacity {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, pool.len(), n);
    Ok(TokenSet::new(picked.into_iter().map(|i| pool[i])))
}
