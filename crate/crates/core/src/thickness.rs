//! Mesh thickness planes along the camera axis and the thickness loss.
//!
//! Planes are `H×W` grids in world units, row `j` at `y` increasing with `j`,
//! column `i` at `x` increasing with `i`, pixel centers as in the normal
//! renderer. Occupancy grids are `D×H×W` with `d` along `z`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{pixel_center, Bvh};
use crate::par::map_range;
use crate::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct ThicknessPlane {
    pub height: usize,
    pub width: usize,
    /// Row-major, `values[j * width + i]`.
    pub values: Vec<f64>,
    /// Pixels whose rays could not be resolved and were filled from neighbors.
    pub flagged: usize,
}

impl ThicknessPlane {
    pub fn zeros(height: usize, width: usize) -> Self {
        ThicknessPlane {
            height,
            width,
            values: vec![0.0; height * width],
            flagged: 0,
        }
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn pixel_area(&self) -> f64 {
        (2.0 / self.width as f64) * (2.0 / self.height as f64)
    }

    /// Integral of thickness over the image plane.
    pub fn volume(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.pixel_area()
    }

    pub fn csv_string(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "ragged row".into(),
                });
            }
            values.extend(row);
            height += 1;
        }
        Ok(ThicknessPlane {
            height,
            width: width.ok_or(Error::EmptyInput("thickness plane"))?,
            values,
            flagged: 0,
        })
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let data: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        crate::pfm::write_gray(path, self.width, self.height, &data)
    }
}

/// Sum of inside interval lengths along hits sorted by `t`, or `None` when
/// the crossings do not alternate entering/exiting.
fn interval_length(hits: &[crate::mesh::RayHit]) -> Option<f64> {
    if hits.len() % 2 == 1 {
        return None;
    }
    let mut total = 0.0;
    for pair in hits.chunks(2) {
        if !pair[0].entering || pair[1].entering {
            return None;
        }
        total += pair[1].t - pair[0].t;
    }
    Some(total)
}

/// Ray-based thickness: per pixel, the total length of the inside
/// intervals along a `-z` ray.
pub fn exact_thickness_plane(bvh: &Bvh, resolution: usize) -> ThicknessPlane {
    let r = resolution;
    let z0 = bvh.bbox().max.z.max(1.0) + 1.0;
    let rows: Vec<Vec<Option<f64>>> = map_range(r, |j| {
        let y = pixel_center(j, r);
        (0..r)
            .map(|i| {
                let o = Vec3::new(pixel_center(i, r), y, z0);
                let (hits, grazing) = bvh.raycast_jittered(&o, &-Vec3::z());
                if grazing {
                    None
                } else {
                    interval_length(&hits)
                }
            })
            .collect()
    });
    let raw: Vec<Option<f64>> = rows.into_iter().flatten().collect();
    let mut plane = ThicknessPlane::zeros(r, r);
    for (k, v) in raw.iter().enumerate() {
        match v {
            Some(t) => plane.values[k] = *t,
            None => {
                plane.flagged += 1;
                let (j, i) = (k / r, k % r);
                let mut acc = (0.0, 0);
                for (dj, di) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nj, ni) = (j as i64 + dj, i as i64 + di);
                    if nj >= 0 && ni >= 0 && (nj as usize) < r && (ni as usize) < r {
                        if let Some(t) = raw[nj as usize * r + ni as usize] {
                            acc.0 += t;
                            acc.1 += 1;
                        }
                    }
                }
                plane.values[k] = if acc.1 > 0 { acc.0 / acc.1 as f64 } else { 0.0 };
            }
        }
    }
    plane
}

/// Boolean occupancy at voxel centers of a `D×H×W` grid spanning `[-1, 1]³`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// `data[(d * height + j) * width + i]`.
    pub data: Vec<bool>,
}

impl OccupancyGrid {
    pub fn index(&self, d: usize, j: usize, i: usize) -> usize {
        (d * self.height + j) * self.width + i
    }

    pub fn get(&self, d: usize, j: usize, i: usize) -> bool {
        self.data[self.index(d, j, i)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn voxel_volume(&self) -> f64 {
        8.0 / (self.depth * self.height * self.width) as f64
    }

    pub fn center(&self, d: usize, j: usize, i: usize) -> Vec3 {
        Vec3::new(
            pixel_center(i, self.width),
            pixel_center(j, self.height),
            pixel_center(d, self.depth),
        )
    }

    pub fn as_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&b| f64::from(u8::from(b))).collect()
    }
}

/// Inside test at every voxel center. One `+z` ray per column decides all
/// voxels in it by crossing parity; columns whose ray keeps grazing an edge
/// fall back to per-voxel tests.
pub fn voxelize(bvh: &Bvh, depth: usize, height: usize, width: usize) -> OccupancyGrid {
    assert!(depth >= 1 && height >= 1 && width >= 1);
    let b = bvh.bbox();
    let z0 = b.min.z.min(-1.0) - 1.0;
    let columns: Vec<Vec<bool>> = map_range(height * width, |c| {
        let (j, i) = (c / width, c % width);
        let (x, y) = (pixel_center(i, width), pixel_center(j, height));
        let zs = (0..depth).map(|d| pixel_center(d, depth));
        if x < b.min.x || x > b.max.x || y < b.min.y || y > b.max.y {
            return vec![false; depth];
        }
        let (hits, grazing) = bvh.raycast_jittered(&Vec3::new(x, y, z0), &Vec3::z());
        if grazing || hits.len() % 2 == 1 {
            return zs.map(|z| bvh.is_inside(&Vec3::new(x, y, z))).collect();
        }
        zs.map(|z| hits.iter().filter(|h| h.point.z < z).count() % 2 == 1)
            .collect()
    });
    let mut data = vec![false; depth * height * width];
    for (c, col) in columns.iter().enumerate() {
        for (d, &v) in col.iter().enumerate() {
            data[d * height * width + c] = v;
        }
    }
    OccupancyGrid {
        depth,
        height,
        width,
        data,
    }
}

/// `plane[j, i] = dz * Σ_d grid[d, j, i]` for a `D×H×W` grid of values in `[0, 1]`.
pub fn voxel_thickness_plane(grid: &[f64], dims: (usize, usize, usize), dz: f64) -> Result<ThicknessPlane> {
    let (d, h, w) = dims;
    assert_eq!(grid.len(), d * h * w, "grid size does not match dims");
    if let Some((index, &value)) = grid.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfUnitRange { index, value });
    }
    let mut plane = ThicknessPlane::zeros(h, w);
    for slice in grid.chunks(h * w) {
        for (p, v) in plane.values.iter_mut().zip(slice) {
            *p += v;
        }
    }
    for p in &mut plane.values {
        *p *= dz;
    }
    Ok(plane)
}

/// Mean squared difference and its gradient with respect to `pred`.
pub fn mtl_loss(pred: &ThicknessPlane, gt: &ThicknessPlane) -> Result<(f64, Vec<f64>)> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::ResolutionMismatch {
            left: (pred.height, pred.width),
            right: (gt.height, gt.width),
        });
    }
    let n = pred.values.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(p, g)| {
            let d = p - g;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_plane_cube_and_sphere() {
        let cube = Bvh::build(fixtures::unit_cube());
        let p = exact_thickness_plane(&cube, 64);
        // pixels 31/32 straddle x = 0
        assert!((p.get(32, 32) - 1.0).abs() < 1e-9);
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.flagged, 0);
        let s = Bvh::build(fixtures::icosphere(3, 1.0));
        // odd resolution puts a pixel center on the axis
        let p = exact_thickness_plane(&s, 65);
        assert!((p.get(32, 32) - 2.0).abs() < 0.01, "{}", p.get(32, 32));
    }

    #[test]
    fn silhouette_consistency() {
        let t = Bvh::build(fixtures::torus(0.7, 0.3, 32, 16));
        let p = exact_thickness_plane(&t, 48);
        for j in 0..48 {
            for i in 0..48 {
                let o = Vec3::new(pixel_center(i, 48), pixel_center(j, 48), 5.0);
                let hit = !t.raycast(&o, &-Vec3::z()).is_empty();
                assert_eq!(p.get(j, i) > 0.0, hit, "{j} {i}");
            }
        }
    }

    #[test]
    fn volume_identity_on_cube() {
        let cube = Bvh::build(fixtures::unit_cube());
        let p = exact_thickness_plane(&cube, 128);
        assert!((p.volume() - 1.0).abs() < 0.01, "{}", p.volume());
    }

    #[test]
    fn voxelize_cube_volume() {
        let cube = Bvh::build(fixtures::unit_cube());
        let g = voxelize(&cube, 64, 64, 64);
        let vol = g.count() as f64 * g.voxel_volume();
        let surface_voxels = 6.0 * (64.0 / 2.0) * (64.0 / 2.0);
        assert!((vol - 1.0).abs() <= 3.0 * surface_voxels * g.voxel_volume(), "{vol}");
        let big = Bvh::build(fixtures::box_mesh(Vec3::repeat(-0.8), Vec3::repeat(0.8)));
        let tiny = voxelize(&big, 2, 2, 2);
        assert_eq!(tiny.data.len(), 8);
        assert_eq!(tiny.count(), 8);
        let far = Bvh::build(fixtures::box_mesh(Vec3::new(0.9, 0.9, 0.9), Vec3::new(0.95, 0.95, 0.95)));
        assert_eq!(voxelize(&far, 8, 8, 8).count(), 0);
    }

    #[test]
    fn voxelize_agrees_with_inside_test() {
        let t = Bvh::build(fixtures::torus(0.7, 0.3, 24, 12));
        let g = voxelize(&t, 20, 24, 28);
        for d in 0..20 {
            for j in 0..24 {
                for i in 0..28 {
                    assert_eq!(g.get(d, j, i), t.is_inside(&g.center(d, j, i)));
                }
            }
        }
    }

    #[test]
    fn voxel_plane_basics() {
        let ones = vec![1.0; 8 * 3 * 2];
        let p = voxel_thickness_plane(&ones, (8, 3, 2), 2.0 / 8.0).unwrap();
        assert!(p.values.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let zeros = vec![0.0; 8 * 3 * 2];
        assert!(voxel_thickness_plane(&zeros, (8, 3, 2), 0.25).unwrap().values.iter().all(|&v| v == 0.0));
        let mut bad = zeros.clone();
        bad[5] = 1.5;
        assert!(matches!(
            voxel_thickness_plane(&bad, (8, 3, 2), 0.25),
            Err(Error::OutOfUnitRange { index: 5, .. })
        ));
    }

    fn edge_pixel(p: &ThicknessPlane, j: usize, i: usize) -> bool {
        let r = p.width as i64;
        let inside = p.get(j, i) > 0.0;
        (-1i64..=1).any(|dj| {
            (-1i64..=1).any(|di| {
                let (nj, ni) = (j as i64 + dj, i as i64 + di);
                nj >= 0 && ni >= 0 && nj < r && ni < r && (p.get(nj as usize, ni as usize) > 0.0) != inside
            })
        })
    }

    fn max_interior_diff(bvh: &Bvh, n: usize) -> f64 {
        let exact = exact_thickness_plane(bvh, n);
        let g = voxelize(bvh, n, n, n);
        let vox = voxel_thickness_plane(&g.as_unit(), (n, n, n), 2.0 / n as f64).unwrap();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                if !edge_pixel(&exact, j, i) {
                    worst = worst.max((exact.get(j, i) - vox.get(j, i)).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn voxel_plane_matches_exact_on_cube() {
        let cube = Bvh::build(fixtures::unit_cube());
        let dz = 2.0 / 128.0;
        assert!(max_interior_diff(&cube, 128) <= 2.0 * dz);
    }

    #[test]
    fn voxel_plane_converges() {
        let s = Bvh::build(fixtures::icosphere(3, 0.8));
        let e: Vec<f64> = [32, 64, 128].iter().map(|&n| max_interior_diff(&s, n)).collect();
        assert!(e[1] <= e[0] + 1e-12 && e[2] <= e[1] + 1e-12, "{e:?}");
    }

    #[test]
    fn mtl_values_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_plane = || ThicknessPlane {
            values: (0..64).map(|_| rng.random_range(0.0..1.0)).collect(),
            ..ThicknessPlane::zeros(8, 8)
        };
        let gt = rand_plane();
        let (l, g) = mtl_loss(&gt, &gt).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let shifted = ThicknessPlane {
            values: gt.values.iter().map(|v| v + 0.1).collect(),
            ..gt.clone()
        };
        assert!((mtl_loss(&shifted, &gt).unwrap().0 - 0.01).abs() < 1e-12);

        let pred = rand_plane();
        let (_, g) = mtl_loss(&pred, &gt).unwrap();
        let h = 1e-5;
        for k in 0..64 {
            let mut a = pred.clone();
            let mut b = pred.clone();
            a.values[k] += h;
            b.values[k] -= h;
            let fd = (mtl_loss(&a, &gt).unwrap().0 - mtl_loss(&b, &gt).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "{fd} {}", g[k]);
        }
        assert!(matches!(
            mtl_loss(&ThicknessPlane::zeros(4, 4), &gt),
            Err(Error::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let p = ThicknessPlane {
            values: vec![0.0, 0.5, 1.25, 2.0, 0.125, 3.0],
            ..ThicknessPlane::zeros(2, 3)
        };
        assert_eq!(ThicknessPlane::parse_csv(&p.csv_string()).unwrap(), p);
    }
}
