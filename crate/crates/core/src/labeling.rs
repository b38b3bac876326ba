//! Occupancy labels and camera-direction sample normals.
//!
//! Labels live in `[0, 1]`: above 0.5 inside, exactly 0.5 on the surface.
//! Continuous labels are truncated signed distances mapped affinely:
//! `0.5 + 0.5 * clamp(s / delta, -1, 1)` with `s > 0` inside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Bvh, RayHit};
use crate::Vec3;

/// Rays along `z` start this far behind the query point so that points lying
/// on the surface still register a crossing at distance ~0.
const BACKOFF: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    /// Truncation distance of any-direction labels.
    pub delta_omni: f64,
    /// Truncation distance of camera-direction labels.
    pub delta_z: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            delta_omni: 0.05,
            delta_z: 0.05,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v) in [("delta_omni", self.delta_omni), ("delta_z", self.delta_z)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{prefix}.{name}"), format!("must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Maps a signed distance (positive inside) to a label.
pub fn truncated_label(signed_distance: f64, delta: f64) -> f64 {
    0.5 + 0.5 * (signed_distance / delta).clamp(-1.0, 1.0)
}

pub fn binary_label(bvh: &Bvh, p: &Vec3) -> f64 {
    if bvh.is_inside(p) {
        1.0
    } else {
        0.0
    }
}

/// Nearest surface crossing along `+z` or `-z`. Ties go to `+z`.
#[derive(Clone, Copy, Debug)]
pub struct ZCrossing {
    pub distance: f64,
    pub hit: RayHit,
    pub towards_plus_z: bool,
}

pub fn nearest_z_crossing(bvh: &Bvh, p: &Vec3) -> Option<ZCrossing> {
    let first = |d: Vec3| {
        let origin = p - d * BACKOFF;
        bvh.raycast_jittered(&origin, &d).0.first().map(|h| ZCrossing {
            distance: (h.t - BACKOFF).abs(),
            hit: *h,
            towards_plus_z: d.z > 0.0,
        })
    };
    match (first(Vec3::z()), first(-Vec3::z())) {
        (Some(a), Some(b)) => Some(if b.distance < a.distance { b } else { a }),
        (a, b) => a.or(b),
    }
}

/// Camera-direction label: truncated distance to the nearest crossing along
/// `±z`. Points with no crossing in either direction get the binary label.
pub fn camera_label(bvh: &Bvh, p: &Vec3, delta_z: f64) -> f64 {
    match nearest_z_crossing(bvh, p) {
        Some(c) => {
            let sign = if bvh.is_inside(p) { 1.0 } else { -1.0 };
            truncated_label(sign * c.distance, delta_z)
        }
        None => binary_label(bvh, p),
    }
}

/// Any-direction label from the exact closest-point distance.
pub fn omni_label(bvh: &Bvh, p: &Vec3, delta_omni: f64) -> f64 {
    truncated_label(bvh.signed_distance(p), delta_omni)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleNormal {
    pub normal: Vec3,
    /// Neither `z` ray hit; the normal comes from the closest point instead.
    pub fallback: bool,
}

/// Normal of the surface point nearest to `p` along the camera axis.
pub fn sample_normal(bvh: &Bvh, p: &Vec3) -> SampleNormal {
    match nearest_z_crossing(bvh, p) {
        Some(c) => SampleNormal {
            normal: c.hit.normal,
            fallback: false,
        },
        None => SampleNormal {
            normal: bvh.closest_point(p).normal,
            fallback: true,
        },
    }
}
