//! `STCACT01` activation dumps.
//!
//! Little-endian layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "STCACT01"
//! 8       4     version (u32, currently 1)
//! 12      4     n_tokens (u32)
//! 16      4     width (u32)
//! 20      4     n_layers (u32): decoder layers whose outputs follow the prefix
//! 24      4     provenance length in bytes (u32)
//! 28      P     provenance, UTF-8
//! 28+P    ...   (n_layers + 1) * n_tokens * width f32 values
//! ```
//!
//! Slab 0 is the visual prefix as fed to the language model; slab `l > 0` is
//! the residual stream after decoder layer `l - 1` at the same positions.

use std::fs;
use std::path::Path;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STCACT01";
pub const VERSION: u32 = 1;
const HEADER_FIXED: usize = 28;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u32,
    pub n_tokens: u32,
    pub width: u32,
    pub n_layers: u32,
    pub provenance: String,
}

impl DumpHeader {
    pub fn element_count(&self) -> Option<usize> {
        (self.n_layers as usize + 1)
            .checked_mul(self.n_tokens as usize)?
            .checked_mul(self.width as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub header: DumpHeader,
    payload: Vec<f32>,
}

impl ActivationDump {
    /// Dump holding only a visual prefix.
    pub fn from_embeddings(set: &EmbeddingSet, provenance: impl Into<String>) -> Result<Self> {
        Self::new(
            set.len(),
            set.width(),
            0,
            provenance,
            set.as_slice().to_vec(),
        )
    }

    pub fn new(
        n_tokens: usize,
        width: usize,
        n_layers: usize,
        provenance: impl Into<String>,
        payload: Vec<f32>,
    ) -> Result<Self> {
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} does not fit in u32")))
        };
        let header = DumpHeader {
            version: VERSION,
            n_tokens: to_u32(n_tokens, "n_tokens")?,
            width: to_u32(width, "width")?,
            n_layers: to_u32(n_layers, "n_layers")?,
            provenance: provenance.into(),
        };
        if header.element_count() != Some(payload.len()) {
            return Err(Error::Shape(format!(
                "payload has {} floats, header implies {:?}",
                payload.len(),
                header.element_count()
            )));
        }
        Ok(Self { header, payload })
    }

    pub fn n_tokens(&self) -> usize {
        self.header.n_tokens as usize
    }

    pub fn width(&self) -> usize {
        self.header.width as usize
    }

    /// Number of stored slabs, `n_layers + 1`.
    pub fn n_slabs(&self) -> usize {
        self.header.n_layers as usize + 1
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    pub fn slab(&self, index: usize) -> &[f32] {
        let n = self.n_tokens() * self.width();
        &self.payload[index * n..(index + 1) * n]
    }

    pub fn hidden(&self, slab: usize, position: usize) -> &[f32] {
        let w = self.width();
        &self.slab(slab)[position * w..(position + 1) * w]
    }

    /// Slab 0 as an embedding set.
    pub fn embeddings(&self) -> Result<EmbeddingSet> {
        if self.width() == 0 {
            return Err(Error::Shape("dump has zero width".into()));
        }
        EmbeddingSet::new(self.width(), self.slab(0).to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let prov = self.header.provenance.as_bytes();
        let mut out = Vec::with_capacity(HEADER_FIXED + prov.len() + self.payload.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.version.to_le_bytes());
        out.extend_from_slice(&self.header.n_tokens.to_le_bytes());
        out.extend_from_slice(&self.header.width.to_le_bytes());
        out.extend_from_slice(&self.header.n_layers.to_le_bytes());
        out.extend_from_slice(&(prov.len() as u32).to_le_bytes());
        out.extend_from_slice(prov);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        let u32_at = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| {
                    fmt(
                        bytes.len(),
                        format!("truncated header, need field at {off}"),
                    )
                })
        };

        match bytes.get(..8) {
            Some(m) if m == MAGIC => {}
            Some(_) => return Err(fmt(0, "bad magic, expected STCACT01".into())),
            None => return Err(fmt(bytes.len(), "truncated header, missing magic".into())),
        }
        let version = u32_at(8)?;
        if version != VERSION {
            return Err(fmt(8, format!("unsupported version {version}")));
        }
        let n_tokens = u32_at(12)?;
        let width = u32_at(16)?;
        let n_layers = u32_at(20)?;
        let prov_len = u32_at(24)? as usize;
        let prov_end = HEADER_FIXED + prov_len;
        let prov_bytes = bytes
            .get(HEADER_FIXED..prov_end)
            .ok_or_else(|| fmt(bytes.len(), "truncated provenance string".into()))?;
        let provenance = std::str::from_utf8(prov_bytes)
            .map_err(|e| {
                fmt(
                    HEADER_FIXED + e.valid_up_to(),
                    "provenance is not UTF-8".into(),
                )
            })?
            .to_string();

        let header = DumpHeader {
            version,
            n_tokens,
            width,
            n_layers,
            provenance,
        };
        let count = header
            .element_count()
            .ok_or_else(|| fmt(12, "element count overflows".into()))?;
        let expected_end = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(prov_end))
            .ok_or_else(|| fmt(12, "payload size overflows".into()))?;
        if bytes.len() < expected_end {
            return Err(fmt(
                bytes.len(),
                format!(
                    "truncated payload: expected {expected_end} bytes, found {}",
                    bytes.len()
                ),
            ));
        }
        if bytes.len() > expected_end {
            return Err(fmt(
                expected_end,
                format!(
                    "{} trailing bytes after payload",
                    bytes.len() - expected_end
                ),
            ));
        }
        let payload = bytes[prov_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { header, payload })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Loads and validates a dump from disk.
pub fn ingest_activations(path: impl AsRef<Path>) -> Result<ActivationDump> {
    ActivationDump::read(path)
}
