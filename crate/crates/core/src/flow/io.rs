//! `FLO1` binary flow dumps: magic, width and height as little-endian u32,
//! then row-major little-endian f32 `(u, v)` pairs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec2;

use super::FlowField;

const MAGIC: &[u8; 4] = b"FLO1";

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + flow.vectors().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    for v in flow.vectors() {
        buf.extend_from_slice(&(v.x as f32).to_le_bytes());
        buf.extend_from_slice(&(v.y as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing FLO1 header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as f64;
    let (w, h) = (u32_at(4), u32_at(8));
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {w}x{h}, found {}", bytes.len()),
        ));
    }
    let vectors = (0..w * h)
        .map(|i| Vec2::new(f32_at(12 + i * 8), f32_at(16 + i * 8)))
        .collect();
    FlowField::from_vectors(w, h, vectors)
}
