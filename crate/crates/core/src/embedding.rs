//! Visual prefix embeddings.

use crate::error::{Error, Result};
use crate::TokenId;

/// Where a row of an [`EmbeddingSet`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Produced by the vision side (generator or ingested dump).
    Visual,
    /// Overwritten with an uninformative replacement vector.
    Ablated,
    /// Overwritten with the embedding of a text token.
    Injected(TokenId),
}

/// `N` row vectors of width `d_model`, stored row-major, with per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    width: usize,
    data: Vec<f32>,
    provenance: Vec<Provenance>,
}

impl EmbeddingSet {
    /// Wraps a row-major buffer. `data.len()` must be a multiple of `width`.
    pub fn new(width: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Shape("embedding width must be positive".into()));
        }
        if !data.len().is_multiple_of(width) {
            return Err(Error::Shape(format!(
                "buffer of {} floats is not a whole number of rows of width {width}",
                data.len()
            )));
        }
        let n = data.len() / width;
        Ok(Self {
            width,
            data,
            provenance: vec![Provenance::Visual; n],
        })
    }

    pub fn empty(width: usize) -> Self {
        Self {
            width,
            data: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(width: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "row {i} has width {} but expected {width}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(width, data)
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn provenance(&self, i: usize) -> Provenance {
        self.provenance[i]
    }

    pub(crate) fn set_row(&mut self, i: usize, values: &[f32], provenance: Provenance) {
        debug_assert_eq!(values.len(), self.width);
        self.data[i * self.width..(i + 1) * self.width].copy_from_slice(values);
        self.provenance[i] = provenance;
    }

    /// L2 norm of each row, accumulated in f64.
    pub fn row_norms(&self) -> Vec<f64> {
        self.rows()
            .map(|r| {
                r.iter()
                    .map(|&v| f64::from(v) * f64::from(v))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}
