//! Portable float maps, little-endian (negative scale). Rows are stored
//! bottom-to-top, which matches our row order (row 0 at `y = -1`).

use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_gray(width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut buf = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn encode_rgb(width: usize, height: usize, data: &[[f32; 3]]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut buf = format!("PF\n{width} {height}\n-1.0\n").into_bytes();
    for px in data {
        for v in px {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn write_gray(path: impl AsRef<Path>, width: usize, height: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_gray(width, height, data)).map_err(|e| Error::io(path, e))
}

pub fn write_rgb(path: impl AsRef<Path>, width: usize, height: usize, data: &[[f32; 3]]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_rgb(width, height, data)).map_err(|e| Error::io(path, e))
}

/// Decoded map: width, height, channels, and row-major samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn decode(bytes: &[u8]) -> Result<Pfm> {
    let bad = |m: &str| Error::Format(format!("pfm: {m}"));
    // header is three whitespace-terminated tokens
    let mut tokens = Vec::new();
    let mut start = None;
    let mut pos = 0;
    while tokens.len() < 4 && pos < bytes.len() {
        let ws = bytes[pos].is_ascii_whitespace();
        match (start, ws) {
            (None, false) => start = Some(pos),
            (Some(s), true) => {
                tokens.push(std::str::from_utf8(&bytes[s..pos]).map_err(|_| bad("header"))?);
                start = None;
            }
            _ => {}
        }
        pos += 1;
    }
    if tokens.len() < 4 {
        return Err(bad("truncated header"));
    }
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("bad magic")),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| bad("scale"))?;
    let body = &bytes[pos..];
    let n = width * height * channels;
    if body.len() != 4 * n {
        return Err(bad("payload size"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| {
            let b = c.try_into().unwrap();
            if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip() {
        let d = [0.0, 1.5, -2.0, 3.25, 4.0, 5.0];
        let b = encode_gray(3, 2, &d);
        assert!(b.starts_with(b"Pf\n3 2\n-1.0\n"));
        let p = decode(&b).unwrap();
        assert_eq!((p.width, p.height, p.channels), (3, 2, 1));
        assert_eq!(p.data, d);
    }

    #[test]
    fn rgb_round_trip() {
        let d = [[0.0, 0.5, 1.0], [-1.0, 0.25, 2.0]];
        let p = decode(&encode_rgb(2, 1, &d)).unwrap();
        assert_eq!(p.channels, 3);
        assert_eq!(p.data, vec![0.0, 0.5, 1.0, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn rejects_truncated() {
        let b = encode_gray(2, 2, &[1.0; 4]);
        assert!(decode(&b[..b.len() - 1]).is_err());
        assert!(decode(b"P6\n1 1\n255\n").is_err());
    }
}
