//! Binary sample-set files: magic `FSS1`, `u32` version, `u64` count, then
//! per point position `3×f32`, label `f32`, normal `3×f32`, kind `u8`,
//! twin `i64` (-1 for none). Little-endian throughout.

use std::io::{Read, Write};
use std::path::Path;

use super::{SampleKind, SamplePoint};
use crate::error::{Error, Result};
use crate::Vec3;

pub const MAGIC: &[u8; 4] = b"FSS1";
pub const VERSION: u32 = 1;
const RECORD: usize = 3 * 4 + 4 + 3 * 4 + 1 + 8;

pub fn encode(points: &[SamplePoint]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + points.len() * RECORD);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for v in p.position.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(p.label as f32).to_le_bytes());
        for v in p.normal.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.push(p.kind.code());
        let twin = p.twin.map_or(-1, |t| t as i64);
        buf.extend_from_slice(&twin.to_le_bytes());
    }
    buf
}

pub fn write_samples<W: Write>(mut w: W, points: &[SamplePoint]) -> Result<()> {
    w.write_all(&encode(points))?;
    Ok(())
}

pub fn save_samples(path: impl AsRef<Path>, points: &[SamplePoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(points)).map_err(|e| Error::io(path, e))
}

fn f32_at(b: &[u8], at: usize) -> f64 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as f64
}

pub fn decode(bytes: &[u8]) -> Result<Vec<SamplePoint>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing FSS1 magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported sample-set version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if count.checked_mul(RECORD) != Some(body.len()) {
        return Err(Error::Format(format!(
            "expected {count} records, payload has {} bytes",
            body.len()
        )));
    }
    let mut points = Vec::with_capacity(count);
    for (i, r) in body.chunks_exact(RECORD).enumerate() {
        let kind = SampleKind::from_code(r[28]).ok_or_else(|| Error::Format(format!("point {i}: bad kind {}", r[28])))?;
        let twin = i64::from_le_bytes(r[29..37].try_into().unwrap());
        let twin = match twin {
            -1 => None,
            t if t >= 0 && (t as usize) < count => Some(t as usize),
            t => return Err(Error::Format(format!("point {i}: twin {t} out of range"))),
        };
        points.push(SamplePoint {
            position: Vec3::new(f32_at(r, 0), f32_at(r, 4), f32_at(r, 8)),
            label: f32_at(r, 12),
            normal: Vec3::new(f32_at(r, 16), f32_at(r, 20), f32_at(r, 24)),
            kind,
            twin,
        });
    }
    Ok(points)
}

pub fn read_samples<R: Read>(mut r: R) -> Result<Vec<SamplePoint>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<SamplePoint>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
