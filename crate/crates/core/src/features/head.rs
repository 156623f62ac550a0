//! Trainable per-level linear embedding heads and the `HHD1` heads file.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::feature_map::{l2_normalize_in_place, FeatureMap, DEFAULT_NORM_EPS};

/// Per-location linear projection followed by L2 normalization.
///
/// `weights` is row-major with `rows` = base descriptor length and
/// `cols` = embedding length, so the projection is `W^T d + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingHead {
    pub level_id: u32,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EmbeddingHead {
    pub fn new(level_id: u32, rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                found: weights.len(),
            });
        }
        if bias.len() != cols {
            return Err(Error::DimMismatch {
                expected: cols,
                found: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("head parameters must be finite".into()));
        }
        Ok(Self {
            level_id,
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn identity(level_id: u32, dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            level_id,
            rows: dim,
            cols: dim,
            weights,
            bias: vec![0.0; dim],
        }
    }

    /// Xavier-uniform weights in `+-sqrt(6 / (rows + cols))`, zero bias.
    pub fn xavier<R: Rng + ?Sized>(level_id: u32, rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            level_id,
            rows,
            cols,
            weights,
            bias: vec![0.0; cols],
        }
    }

    /// Pre-normalization projection `W^T d + b` written into `out`.
    pub fn project_into(&self, d: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &di) in d.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.cols..(i + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += di * w;
            }
        }
    }

    pub fn project(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.project_into(d, &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Applies `head` to every cell of `base` and L2-normalizes the result.
pub fn apply_head(base: &FeatureMap, head: &EmbeddingHead) -> Result<FeatureMap> {
    if base.dim != head.rows {
        return Err(Error::DimMismatch {
            expected: head.rows,
            found: base.dim,
        });
    }
    let mut data = vec![0.0; base.cells() * head.cols];
    for (cell, out) in data.chunks_exact_mut(head.cols).enumerate() {
        head.project_into(base.descriptor(cell), out);
        l2_normalize_in_place(out, DEFAULT_NORM_EPS);
    }
    Ok(FeatureMap {
        level_id: base.level_id,
        scale_factor: base.scale_factor,
        width: base.width,
        height: base.height,
        dim: head.cols,
        data,
        normalized: true,
    })
}

const HHD_MAGIC: &[u8; 4] = b"HHD1";

pub fn encode_heads(heads: &[EmbeddingHead]) -> Vec<u8> {
    let mut out = HHD_MAGIC.to_vec();
    out.extend_from_slice(&(heads.len() as u32).to_le_bytes());
    for h in heads {
        for v in [h.level_id, h.rows as u32, h.cols as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in h.weights.iter().chain(&h.bias) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_heads(bytes: &[u8]) -> Result<Vec<EmbeddingHead>> {
    if bytes.len() < 4 || &bytes[..4] != HHD_MAGIC {
        return Err(Error::BadMagic { expected: "HHD1" });
    }
    let mut cursor = Cursor { bytes, pos: 4 };
    let count = cursor.u32()?;
    let mut heads = Vec::new();
    for _ in 0..count {
        let level_id = cursor.u32()?;
        let rows = cursor.u32()? as usize;
        let cols = cursor.u32()? as usize;
        let n_weights = rows.checked_mul(cols).ok_or(Error::DimOverflow)?;
        let weights = cursor.f32s(n_weights)?;
        let bias = cursor.f32s(cols)?;
        heads.push(EmbeddingHead::new(level_id, rows, cols, weights, bias)?);
    }
    Ok(heads)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::DimOverflow)?;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile {
                expected: end as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or(Error::DimOverflow)?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn write_heads(heads: &[EmbeddingHead], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_heads(heads)).map_err(|e| Error::io(path, e))
}

pub fn read_heads(path: impl AsRef<Path>) -> Result<Vec<EmbeddingHead>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_heads(&bytes)
}
