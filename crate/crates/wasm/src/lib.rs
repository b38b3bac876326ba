//! wasm-bindgen bindings for the static demo page in `www/`. Everything runs
//! single threaded; meshes are rebuilt per call, which is fast enough for
//! the fixtures.

use fss_core::labeling::{binary_label, camera_label, omni_label};
use fss_core::mesh::{fixtures, render_normal_map, Bvh, Side};
use fss_core::schemes::{generate, Scheme, SchemeConfig};
use fss_core::thickness::exact_thickness_plane;
use fss_core::Vec3;
use wasm_bindgen::prelude::*;

fn fixture(name: &str) -> Result<Bvh, JsError> {
    fixtures::all()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, m)| Bvh::build(m))
        .ok_or_else(|| JsError::new(&format!("unknown fixture `{name}`")))
}

fn js(e: fss_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Names of the built-in fixtures, comma separated.
#[wasm_bindgen]
pub fn fixture_names() -> String {
    fixtures::all().into_iter().map(|(n, _)| n).collect::<Vec<_>>().join(",")
}

/// One sample set, flattened as `[x, y, z, label, kind]` per point; `kind`
/// is the point kind code.
#[wasm_bindgen]
pub fn sample_scatter(fixture_name: &str, scheme: &str, budget: usize, seed: u64) -> Result<Vec<f32>, JsError> {
    let bvh = fixture(fixture_name)?;
    let scheme: Scheme = scheme.parse().map_err(js)?;
    let cfg = SchemeConfig {
        total_budget: budget,
        ..Default::default()
    };
    let set = generate(&bvh, scheme, &cfg, None, seed).map_err(js)?;
    Ok(scatter(&set.points))
}

fn scatter(points: &[fss_core::schemes::SamplePoint]) -> Vec<f32> {
    points
        .iter()
        .flat_map(|p| {
            [
                p.position.x as f32,
                p.position.y as f32,
                p.position.z as f32,
                p.label as f32,
                p.kind.code() as f32,
            ]
        })
        .collect()
}

/// `resolution²` RGBA bytes, rows top to bottom. `mode` is `normals`
/// (front view, normals mapped to colors) or `thickness` (grayscale,
/// scaled by the maximum).
#[wasm_bindgen]
pub fn render_image(fixture_name: &str, mode: &str, resolution: usize) -> Result<Vec<u8>, JsError> {
    let bvh = fixture(fixture_name)?;
    let r = resolution.clamp(8, 512);
    let mut rgba = vec![0u8; r * r * 4];
    let put = |rgba: &mut [u8], j: usize, i: usize, c: [f64; 3]| {
        let k = ((r - 1 - j) * r + i) * 4;
        for (a, v) in c.iter().enumerate() {
            rgba[k + a] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        rgba[k + 3] = 255;
    };
    match mode {
        "normals" => {
            let map = render_normal_map(&bvh, r, Side::Front);
            for j in 0..r {
                for i in 0..r {
                    if let Some(n) = map.get(i, j) {
                        put(&mut rgba, j, i, [0.5 + 0.5 * n.x, 0.5 + 0.5 * n.y, 0.5 + 0.5 * n.z]);
                    }
                }
            }
        }
        "thickness" => {
            let plane = exact_thickness_plane(&bvh, r);
            let max = plane.values.iter().cloned().fold(0.0, f64::max).max(1e-12);
            for j in 0..r {
                for i in 0..r {
                    let t = plane.get(j, i) / max;
                    if t > 0.0 {
                        put(&mut rgba, j, i, [t, t, t]);
                    }
                }
            }
        }
        other => return Err(JsError::new(&format!("unknown mode `{other}`"))),
    }
    Ok(rgba)
}

/// Labels along the camera ray through `(x, y)`, `n` points over
/// `z ∈ [-1, 1]`, flattened as `[z, binary, camera, omni]`.
#[wasm_bindgen]
pub fn label_profile(fixture_name: &str, x: f64, y: f64, delta: f64, n: usize) -> Result<Vec<f32>, JsError> {
    let bvh = fixture(fixture_name)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(JsError::new("delta must be in (0, 1]"));
    }
    Ok(profile(&bvh, x, y, delta, n.clamp(2, 4096)))
}

fn profile(bvh: &Bvh, x: f64, y: f64, delta: f64, n: usize) -> Vec<f32> {
    (0..n)
        .flat_map(|k| {
            let z = -1.0 + 2.0 * k as f64 / (n - 1) as f64;
            let p = Vec3::new(x, y, z);
            [
                z as f32,
                binary_label(bvh, &p) as f32,
                camera_label(bvh, &p, delta) as f32,
                omni_label(bvh, &p, delta) as f32,
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_layout() {
        let bvh = fixture("thin_fin").ok().unwrap();
        let set = generate(&bvh, Scheme::Fss, &SchemeConfig::default(), None, 1).unwrap();
        let flat = scatter(&set.points);
        assert_eq!(flat.len(), 5 * set.points.len());
        assert!(flat.chunks(5).all(|c| (0.0..=1.0).contains(&c[3])));
    }

    #[test]
    fn profile_through_slab_center() {
        let bvh = fixture("slab").ok().unwrap();
        let p = profile(&bvh, 0.0, 0.0, 0.05, 201);
        assert_eq!(p.len(), 4 * 201);
        let mid = &p[4 * 100..4 * 101];
        assert_eq!(mid[0], 0.0);
        assert_eq!(mid[1], 1.0);
        // binary and continuous labels agree far from the surface
        let end = &p[0..4];
        assert_eq!(end[1..], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn fixture_list() {
        assert!(fixture_names().split(',').any(|n| n == "thin_fin"));
    }
}
