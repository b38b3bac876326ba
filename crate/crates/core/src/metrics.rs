//! Reconstruction metrics: Chamfer distance, point-to-surface distance,
//! normal reprojection error and thin-feature recall. Distances are
//! unsigned; Chamfer averages both directions, P2S goes recon → gt.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::omni_label;
use crate::mesh::{render_normal_map, sample_surface, Bvh, NormalMap, Side, TriangleMesh};
use crate::par::map_range;
use crate::schemes::SamplePoint;
use crate::thickness::OccupancyGrid;
use crate::Vec3;

/// Mean distance from `n` area-uniform samples of `from` to the surface of `to`.
pub fn mean_surface_distance(from: &TriangleMesh, to: &Bvh, n: usize, seed: u64) -> Result<f64> {
    if from.is_empty() || to.mesh().is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_surface(from, n, None, &mut rng)?;
    let d = map_range(pts.len(), |k| to.closest_point(&pts[k].position).distance);
    Ok(d.iter().sum::<f64>() / n as f64)
}

/// Symmetric Chamfer distance, `(A→B + B→A) / 2`.
pub fn chamfer(a: &Bvh, b: &Bvh, n: usize, seed: u64) -> Result<f64> {
    let ab = mean_surface_distance(a.mesh(), b, n, seed)?;
    let ba = mean_surface_distance(b.mesh(), a, n, seed.wrapping_add(1))?;
    Ok(0.5 * (ab + ba))
}

/// Point-to-surface: reconstruction samples to the groundtruth surface.
pub fn p2s(recon: &Bvh, gt: &Bvh, n: usize, seed: u64) -> Result<f64> {
    mean_surface_distance(recon.mesh(), gt, n, seed)
}

/// Which way the orthographic camera looks at the meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// The training camera, along `z`.
    Camera,
    /// Rotated a quarter turn about `y`: `(x, y, z) → (z, y, -x)`, so
    /// surfaces seen edge-on by the camera face the viewer.
    Side,
}

pub fn rotate_to_side(mesh: &TriangleMesh) -> TriangleMesh {
    let r = |v: &Vec3| Vec3::new(v.z, v.y, -v.x);
    mesh.map(r, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalError {
    /// Mean L2 distance between unit normals over jointly covered pixels,
    /// averaged over the front and back maps.
    pub error: f64,
    /// Fraction of pixels covered by exactly one of the two meshes.
    pub coverage_mismatch: f64,
}

fn map_error(a: &NormalMap, b: &NormalMap) -> (f64, usize, usize, usize) {
    let (mut sum, mut joint, mut mismatch) = (0.0, 0, 0);
    for k in 0..a.mask.len() {
        match (a.mask[k], b.mask[k]) {
            (true, true) => {
                sum += (a.normals[k] - b.normals[k]).norm();
                joint += 1;
            }
            (true, false) | (false, true) => mismatch += 1,
            _ => {}
        }
    }
    (sum, joint, mismatch, a.mask.len())
}

pub fn normal_reprojection(recon: &Bvh, gt: &Bvh, resolution: usize) -> Result<NormalError> {
    let mut errors = Vec::new();
    let (mut mismatch, mut pixels) = (0, 0);
    for side in [Side::Front, Side::Back] {
        let a = render_normal_map(recon, resolution, side);
        let b = render_normal_map(gt, resolution, side);
        let (sum, joint, mm, px) = map_error(&a, &b);
        if joint > 0 {
            errors.push(sum / joint as f64);
        }
        mismatch += mm;
        pixels += px;
    }
    if errors.is_empty() {
        return Err(Error::EmptyInput("jointly covered pixels"));
    }
    Ok(NormalError {
        error: errors.iter().sum::<f64>() / errors.len() as f64,
        coverage_mismatch: mismatch as f64 / pixels as f64,
    })
}

pub fn normal_reprojection_view(recon: &TriangleMesh, gt: &TriangleMesh, resolution: usize, view: View) -> Result<NormalError> {
    match view {
        View::Camera => normal_reprojection(&Bvh::build(recon.clone()), &Bvh::build(gt.clone()), resolution),
        View::Side => normal_reprojection(
            &Bvh::build(rotate_to_side(recon)),
            &Bvh::build(rotate_to_side(gt)),
            resolution,
        ),
    }
}

/// Groundtruth-inside voxels whose centers satisfy `region`.
pub fn region_mask(gt: &OccupancyGrid, region: impl Fn(&Vec3) -> bool) -> Vec<bool> {
    let mut mask = vec![false; gt.data.len()];
    for d in 0..gt.depth {
        for j in 0..gt.height {
            for i in 0..gt.width {
                let k = gt.index(d, j, i);
                mask[k] = gt.data[k] && region(&gt.center(d, j, i));
            }
        }
    }
    mask
}

/// Fraction of masked voxels whose reconstructed occupancy exceeds 0.5.
pub fn fin_recall(recon: &[f64], mask: &[bool]) -> Result<f64> {
    if recon.len() != mask.len() {
        return Err(Error::ResolutionMismatch {
            left: (recon.len(), 1),
            right: (mask.len(), 1),
        });
    }
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return Err(Error::EmptyInput("fin mask"));
    }
    let hit = recon.iter().zip(mask).filter(|(&v, &m)| m && v > 0.5).count();
    Ok(hit as f64 / total as f64)
}

/// Pooled within-bin variance of the points' labels divided by that of
/// their omni labels, binning by signed surface distance over
/// `[-delta, delta]`. Large values mean the labels are ambiguous at a fixed
/// distance to the surface.
pub fn label_variance_ratio(bvh: &Bvh, points: &[SamplePoint], delta: f64, bins: usize) -> f64 {
    let mut acc = vec![[0.0f64; 5]; bins]; // n, Σl, Σl², Σo, Σo²
    for p in points {
        let s = bvh.signed_distance(&p.position);
        if s.abs() >= delta {
            continue;
        }
        let b = (((s + delta) / (2.0 * delta)) * bins as f64) as usize;
        let o = omni_label(bvh, &p.position, delta);
        let a = &mut acc[b.min(bins - 1)];
        a[0] += 1.0;
        a[1] += p.label;
        a[2] += p.label * p.label;
        a[3] += o;
        a[4] += o * o;
    }
    let (mut vl, mut vo) = (0.0, 0.0);
    for a in acc.iter().filter(|a| a[0] >= 2.0) {
        let n = a[0];
        vl += a[2] - a[1] * a[1] / n;
        vo += a[4] - a[3] * a[3] / n;
    }
    vl / vo.max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Chamfer distance in original mesh units.
    pub cd: f64,
    /// Point-to-surface distance in original mesh units.
    pub p2s: f64,
    pub normal_err: f64,
    pub normal_coverage_mismatch: f64,
    pub fin_recall: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub resolution: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "cd,p2s,normal_err,normal_coverage_mismatch,fin_recall,samples,seed,resolution";

    /// Computes all metrics; `length_scale` converts normalized distances to
    /// original units.
    pub fn compute(recon: &TriangleMesh, gt: &TriangleMesh, samples: usize, seed: u64, resolution: usize, length_scale: f64) -> Result<Self> {
        let (r, g) = (Bvh::build(recon.clone()), Bvh::build(gt.clone()));
        let normal = normal_reprojection(&r, &g, resolution)?;
        Ok(MetricReport {
            cd: chamfer(&r, &g, samples, seed)? * length_scale,
            p2s: p2s(&r, &g, samples, seed)? * length_scale,
            normal_err: normal.error,
            normal_coverage_mismatch: normal.coverage_mismatch,
            fin_recall: None,
            samples,
            seed,
            resolution,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.cd,
            self.p2s,
            self.normal_err,
            self.normal_coverage_mismatch,
            self.fin_recall.map(|v| v.to_string()).unwrap_or_default(),
            self.samples,
            self.seed,
            self.resolution
        )
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Chamfer distance (unsigned, mean of both directions): {:.6}", self.cd);
        let _ = writeln!(s, "Point-to-surface (recon -> gt, unsigned):           {:.6}", self.p2s);
        let _ = writeln!(s, "Normal reprojection (L2, front/back mean):          {:.6}", self.normal_err);
        let _ = writeln!(s, "Normal coverage mismatch:                           {:.4}", self.normal_coverage_mismatch);
        if let Some(r) = self.fin_recall {
            let _ = writeln!(s, "Fin recall:                                         {r:.4}");
        }
        let _ = writeln!(s, "({} surface samples, seed {}, {}px normal maps)", self.samples, self.seed, self.resolution);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;
    use crate::thickness::voxelize;

    fn square(z: f64) -> TriangleMesh {
        let v = vec![
            Vec3::new(-0.5, -0.5, z),
            Vec3::new(0.5, -0.5, z),
            Vec3::new(0.5, 0.5, z),
            Vec3::new(-0.5, 0.5, z),
        ];
        TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    }

    #[test]
    fn identical_meshes_score_zero() {
        let m = Bvh::build(fixtures::torus(0.7, 0.3, 32, 16));
        assert!(chamfer(&m, &m, 2000, 1).unwrap() < 1e-6);
        assert!(p2s(&m, &m, 2000, 1).unwrap() < 1e-6);
        let n = normal_reprojection(&m, &m, 64).unwrap();
        assert_eq!(n.error, 0.0);
        assert_eq!(n.coverage_mismatch, 0.0);
    }

    #[test]
    fn parallel_squares() {
        let (a, b) = (Bvh::build(square(0.0)), Bvh::build(square(0.1)));
        assert!((chamfer(&a, &b, 1000, 2).unwrap() - 0.1).abs() < 1e-6);
        assert!((p2s(&a, &b, 1000, 2).unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn concentric_spheres() {
        let a = Bvh::build(fixtures::icosphere(4, 1.0));
        let b = Bvh::build(fixtures::icosphere(4, 1.05));
        let cd = chamfer(&a, &b, 10000, 3).unwrap();
        assert!((cd - 0.05).abs() < 0.005, "{cd}");
        let sym = chamfer(&b, &a, 10000, 3).unwrap();
        assert!((cd - sym).abs() / cd < 0.02);
    }

    #[test]
    fn floating_blob_inflates_p2s() {
        let gt = fixtures::icosphere(3, 0.5);
        let mut recon = gt.clone();
        let blob = fixtures::icosphere(2, 0.05).map(|v| v + Vec3::new(0.0, 0.0, 0.9), |n| *n);
        recon.append(&blob);
        let (r, g) = (Bvh::build(recon), Bvh::build(gt));
        assert!(p2s(&r, &g, 20000, 4).unwrap() > p2s(&g, &r, 20000, 4).unwrap());
    }

    #[test]
    fn tilted_plane_normal_error() {
        let flat = square(0.0).map(|v| v * 1.5, |n| *n);
        let (s, c) = (60f64.to_radians().sin(), 60f64.to_radians().cos());
        // tilt about x by 60°; scale so the projection still covers the center
        let tilted = square(0.0).map(|v| Vec3::new(v.x * 1.5, v.y * 1.5 * c, v.y * 1.5 * s), |n| Vec3::new(0.0, -s * n.z, c * n.z));
        let e = normal_reprojection(&Bvh::build(tilted), &Bvh::build(flat), 64).unwrap();
        assert!((e.error - 1.0).abs() < 1e-9, "{e:?}");
    }

    #[test]
    fn wavy_slab_has_positive_error() {
        let wavy = Bvh::build(fixtures::wavy_slab(48));
        let flat = Bvh::build(fixtures::slab());
        assert!(normal_reprojection(&wavy, &flat, 128).unwrap().error > 0.0);
        assert_eq!(normal_reprojection(&flat, &flat, 128).unwrap().error, 0.0);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let a = Bvh::build(fixtures::box_mesh(Vec3::repeat(-0.9), Vec3::repeat(-0.6)));
        let b = Bvh::build(fixtures::box_mesh(Vec3::repeat(0.6), Vec3::repeat(0.9)));
        assert!(normal_reprojection(&a, &b, 32).is_err());
    }

    #[test]
    fn fin_recall_cases() {
        let gt = voxelize(&Bvh::build(fixtures::thin_fin()), 64, 64, 64);
        let mask = region_mask(&gt, fixtures::in_fin_region);
        assert!(mask.iter().any(|&m| m));
        let full = gt.as_unit();
        assert_eq!(fin_recall(&full, &mask).unwrap(), 1.0);
        let body = voxelize(&Bvh::build(fixtures::box_mesh(Vec3::new(-0.6, -1.0, -0.4), Vec3::new(0.6, 0.0, 0.4))), 64, 64, 64);
        assert_eq!(fin_recall(&body.as_unit(), &mask).unwrap(), 0.0);
        let half = voxelize(&Bvh::build(fixtures::partial_fin()), 64, 64, 64);
        let r = fin_recall(&half.as_unit(), &mask).unwrap();
        assert!((r - 0.5).abs() < 0.06, "{r}");
        assert!(fin_recall(&full, &vec![false; full.len()]).is_err());
    }

    #[test]
    fn vertex_order_does_not_matter() {
        let m = fixtures::torus(0.7, 0.3, 24, 12);
        let n = m.vertices.len() as u32;
        // reverse vertex order, remapping faces
        let perm = |i: u32| n - 1 - i;
        let mut vertices = m.vertices.clone();
        vertices.reverse();
        let faces: Vec<[u32; 3]> = m.faces.iter().map(|f| f.map(perm)).collect();
        let p = TriangleMesh::new(vertices, faces).unwrap();
        let (a, b) = (Bvh::build(m), Bvh::build(p));
        assert!(chamfer(&a, &b, 2000, 5).unwrap() < 1e-9);
    }

    #[test]
    fn report_formats() {
        let r = MetricReport {
            cd: 0.5,
            p2s: 0.25,
            fin_recall: Some(1.0),
            samples: 10,
            seed: 3,
            resolution: 64,
            ..Default::default()
        };
        assert_eq!(MetricReport::CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
        assert!(r.csv_row().starts_with("0.5,0.25,0,0,1,10,3,64"));
        assert!(r.text().contains("Fin recall"));
    }
}
