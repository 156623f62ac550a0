//! Middlebury `.flo`: "PIEH", i32 width, i32 height, then interleaved f32
//! `(u, v)` row-major. Unknown flow is stored as 1e9.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PIEH";
const UNKNOWN: f32 = 1e9;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for i in 0..flow.len() {
        let (u, v) = if flow.valid[i] {
            (flow.u[i] as f32, flow.v[i] as f32)
        } else {
            (UNKNOWN, UNKNOWN)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { expected: "PIEH" });
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile {
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w < 0 || h < 0 {
        return Err(Error::InvalidConfig(format!("negative flow dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w.checked_mul(h).ok_or(Error::DimOverflow)?;
    let expected = n.checked_mul(8).and_then(|b| b.checked_add(12)).ok_or(Error::DimOverflow)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let mut flow = FlowField::new(w, h);
    let f = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    for i in 0..n {
        let (u, v) = (f(12 + 8 * i), f(16 + 8 * i));
        flow.u[i] = f64::from(u);
        flow.v[i] = f64::from(v);
        flow.valid[i] = u.is_finite() && v.is_finite() && u.abs() < UNKNOWN && v.abs() < UNKNOWN;
    }
    Ok(flow)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}
