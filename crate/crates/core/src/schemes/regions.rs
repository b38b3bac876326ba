//! Per-face region weight files: one `face_index weight` pair per line.
//! Blank lines and `#` comments are ignored; unlisted faces weigh 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Bvh;

pub fn parse_region_weights(text: &str, face_count: usize) -> Result<Vec<f64>> {
    let mut w = vec![1.0; face_count];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { line: n + 1, message: m };
        let mut it = line.split_whitespace();
        let (Some(f), Some(v), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad(format!("expected `face_index weight`, got `{line}`")));
        };
        let f: usize = f.parse().map_err(|_| bad(format!("bad face index `{f}`")))?;
        let v: f64 = v.parse().map_err(|_| bad(format!("bad weight `{v}`")))?;
        if f >= face_count {
            return Err(bad(format!("face {f} out of range for {face_count} faces")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(bad(format!("weight must be finite and non-negative, got {v}")));
        }
        w[f] = v;
    }
    if !w.iter().any(|&v| v > 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(w)
}

pub fn read_region_weights(path: impl AsRef<Path>, face_count: usize) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_region_weights(&text, face_count)
}

/// Writes every face, including weight-1 faces, so the file is explicit.
pub fn region_weights_string(weights: &[f64]) -> String {
    let mut s = String::with_capacity(weights.len() * 8);
    for (f, w) in weights.iter().enumerate() {
        let _ = writeln!(s, "{f} {w}");
    }
    s
}

pub fn write_region_weights(weights: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, region_weights_string(weights)).map_err(|e| Error::io(path, e))
}

/// `w_thin` on faces whose centroid thickness is below `tau_thin`, else 1.
pub fn thin_face_weights(bvh: &Bvh, tau_thin: f64, w_thin: f64) -> Vec<f64> {
    bvh.face_thickness()
        .into_iter()
        .map(|t| if t.is_some_and(|t| t < tau_thin) { w_thin } else { 1.0 })
        .collect()
}
