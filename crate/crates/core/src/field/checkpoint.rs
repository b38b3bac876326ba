//! Model checkpoints: magic `FSSM`, `u32` version, `u8` variant tag, trigrid
//! dims `3×u32` (`D, H, W`), pixel dims `4×u32` (`C, H, W, hidden`), `u64`
//! parameter count, then the `f32` parameters (trigrid logits first).
//! Absent parts have zero dims. Little-endian.

use std::path::Path;

use super::{Model, PixelAlignedField, TriGrid, Variant};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSSM";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 1 + 7 * 4 + 8;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.push(model.variant().tag());
    let t = model.trigrid.as_ref();
    let f = model.pixel.as_ref();
    let dims = [
        t.map_or(0, |t| t.depth),
        t.map_or(0, |t| t.height),
        t.map_or(0, |t| t.width),
        f.map_or(0, |f| f.channels),
        f.map_or(0, |f| f.height),
        f.map_or(0, |f| f.width),
        f.map_or(0, |f| f.hidden),
    ];
    for d in dims {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let params: Vec<f64> = t.iter().flat_map(|t| t.theta.iter().copied()).chain(f.iter().flat_map(|f| f.params.iter().copied())).collect();
    b.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        b.extend_from_slice(&(v as f32).to_le_bytes());
    }
    b
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let bad = |m: String| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(bad("missing FSSM magic".into()));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let version = u32_at(4);
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let variant = Variant::from_tag(bytes[8]).ok_or_else(|| bad(format!("unknown variant tag {}", bytes[8])))?;
    let dims: Vec<usize> = (0..7).map(|k| u32_at(9 + 4 * k)).collect();
    let count = u64::from_le_bytes(bytes[37..45].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER..];
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(bad(format!("expected {count} parameters, payload has {} bytes", payload.len())));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let has_t = matches!(variant, Variant::Trigrid | Variant::Hybrid);
    let has_p = matches!(variant, Variant::PixelAligned | Variant::Hybrid);
    let mut expected = 0;
    let trigrid = if has_t {
        if dims[..3].contains(&0) {
            return Err(bad("zero trigrid dimension".into()));
        }
        let mut t = TriGrid::new(dims[0], dims[1], dims[2], 0.0);
        expected += t.theta.len();
        if expected > count {
            return Err(bad("payload too short for trigrid".into()));
        }
        for v in &mut t.theta {
            *v = values.next().unwrap();
        }
        Some(t)
    } else {
        None
    };
    let pixel = if has_p {
        if dims[3..].contains(&0) {
            return Err(bad("zero pixel-field dimension".into()));
        }
        let mut f = PixelAlignedField::zeros(dims[3], dims[4], dims[5], dims[6]);
        expected += f.params.len();
        if expected > count {
            return Err(bad("payload too short for pixel field".into()));
        }
        for v in &mut f.params {
            *v = values.next().unwrap();
        }
        Some(f)
    } else {
        None
    };
    if expected != count {
        return Err(bad(format!("expected {expected} parameters, header says {count}")));
    }
    Ok(Model { trigrid, pixel })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
