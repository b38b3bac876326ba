//! Dense occupancy sampling and marching-cubes extraction.

mod table;

use std::collections::HashMap;

use crate::field::Model;
use crate::mesh::{pixel_center, TriangleMesh, MIN_FACE_AREA};
use crate::par::map_range;
use crate::Vec3;
use table::TRI_TABLE;

/// Occupancy values at voxel centers of a `D×H×W` grid over `[-1, 1]³`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseField {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// `values[(d * height + j) * width + i]`, `d` along `z`.
    pub values: Vec<f64>,
}

impl DenseField {
    pub fn from_fn(depth: usize, height: usize, width: usize, f: impl Fn(&Vec3) -> f64 + Sync + Send) -> Self {
        let slabs: Vec<Vec<f64>> = map_range(depth, |d| {
            let z = pixel_center(d, depth);
            let mut out = Vec::with_capacity(height * width);
            for j in 0..height {
                let y = pixel_center(j, height);
                for i in 0..width {
                    out.push(f(&Vec3::new(pixel_center(i, width), y, z)));
                }
            }
            out
        });
        DenseField {
            depth,
            height,
            width,
            values: slabs.concat(),
        }
    }

    pub fn constant(depth: usize, height: usize, width: usize, v: f64) -> Self {
        DenseField {
            depth,
            height,
            width,
            values: vec![v; depth * height * width],
        }
    }

    pub fn get(&self, d: usize, j: usize, i: usize) -> f64 {
        self.values[(d * self.height + j) * self.width + i]
    }

    /// Trilinear interpolation between voxel centers; clamps at the border.
    pub fn query(&self, p: &Vec3) -> f64 {
        let axis = |c: f64, n: usize| -> (usize, usize, f64) {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let u = ((c + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            (i, i + 1, u - i as f64)
        };
        let (i0, i1, tx) = axis(p.x, self.width);
        let (j0, j1, ty) = axis(p.y, self.height);
        let (d0, d1, tz) = axis(p.z, self.depth);
        let mut v = 0.0;
        for (d, wz) in [(d0, 1.0 - tz), (d1, tz)] {
            for (j, wy) in [(j0, 1.0 - ty), (j1, ty)] {
                for (i, wx) in [(i0, 1.0 - tx), (i1, tx)] {
                    v += wz * wy * wx * self.get(d, j, i);
                }
            }
        }
        v
    }
}

/// Model occupancy at the voxel centers of a `resolution³` grid.
pub fn sample_dense_grid(model: &Model, resolution: usize) -> DenseField {
    DenseField::from_fn(resolution, resolution, resolution, |p| model.occupancy(p))
}

/// Corner offsets `(i, j, d)` in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Edge parameters this close to an endpoint snap onto it, so that
/// near-coincident vertices weld instead of forming slivers.
const SNAP: f64 = 1e-6;

/// Extracts the `iso` level set. The field is padded with a layer of zeros
/// first, so the output is closed. Values `>= iso` count as inside; faces
/// are oriented with occupancy decreasing outward. Returns an empty mesh
/// when nothing reaches `iso`.
pub fn marching_cubes(field: &DenseField, iso: f64) -> TriangleMesh {
    let (nd, nh, nw) = (field.depth + 2, field.height + 2, field.width + 2);
    let value = |d: usize, j: usize, i: usize| -> f64 {
        if d == 0 || j == 0 || i == 0 || d == nd - 1 || j == nh - 1 || i == nw - 1 {
            0.0
        } else {
            field.get(d - 1, j - 1, i - 1)
        }
    };
    // padded grid point -> world position; pads sit half a voxel outside [-1, 1]
    let pos = |d: usize, j: usize, i: usize| -> Vec3 {
        let c = |k: usize, n: usize| -1.0 + (k as f64 - 0.5) * 2.0 / n as f64;
        Vec3::new(c(i, field.width), c(j, field.height), c(d, field.depth))
    };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut by_edge: HashMap<(usize, usize), u32> = HashMap::new();
    let mut by_pos: HashMap<[u64; 3], u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let point_id = |d: usize, j: usize, i: usize| (d * nh + j) * nw + i;

    for d in 0..nd - 1 {
        for j in 0..nh - 1 {
            for i in 0..nw - 1 {
                let mut vals = [0.0; 8];
                let mut config = 0usize;
                for (k, c) in CORNERS.iter().enumerate() {
                    vals[k] = value(d + c[2], j + c[1], i + c[0]);
                    if vals[k] < iso {
                        config |= 1 << k;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                let row = &TRI_TABLE[config];
                let mut ids = [0u32; 3];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    for (slot, &e) in tri.iter().enumerate() {
                        let [a, b] = EDGES[e as usize];
                        let (ca, cb) = (CORNERS[a], CORNERS[b]);
                        let ga = point_id(d + ca[2], j + ca[1], i + ca[0]);
                        let gb = point_id(d + cb[2], j + cb[1], i + cb[0]);
                        let key = (ga.min(gb), ga.max(gb));
                        ids[slot] = *by_edge.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[a], vals[b]);
                            let mut t = (iso - va) / (vb - va);
                            if t < SNAP {
                                t = 0.0;
                            } else if t > 1.0 - SNAP {
                                t = 1.0;
                            }
                            let pa = pos(d + ca[2], j + ca[1], i + ca[0]);
                            let pb = pos(d + cb[2], j + cb[1], i + cb[0]);
                            let p = pa + (pb - pa) * t;
                            let bits = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
                            *by_pos.entry(bits).or_insert_with(|| {
                                vertices.push(p);
                                (vertices.len() - 1) as u32
                            })
                        });
                    }
                    faces.push(ids);
                }
            }
        }
    }

    faces.retain(|&[a, b, c]| {
        if a == b || b == c || a == c {
            return false;
        }
        let (pa, pb, pc) = (vertices[a as usize], vertices[b as usize], vertices[c as usize]);
        (pb - pa).cross(&(pc - pa)).norm() * 0.5 >= MIN_FACE_AREA
    });
    if faces.is_empty() {
        return TriangleMesh::empty();
    }
    compact(vertices, faces)
}

/// Drops unreferenced vertices, keeping first-use order.
fn compact(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> TriangleMesh {
    let mut remap = vec![u32::MAX; vertices.len()];
    let mut out = Vec::new();
    let faces: Vec<[u32; 3]> = faces
        .into_iter()
        .map(|f| {
            f.map(|v| {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = out.len() as u32;
                    out.push(vertices[v as usize]);
                }
                remap[v as usize]
            })
        })
        .collect();
    TriangleMesh::new(out, faces).expect("marching cubes output is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Model, TrainConfig};

    fn sphere_field(n: usize, r: f64) -> DenseField {
        let h = 2.0 / n as f64;
        // 1 inside, 0 outside, linear over one voxel across the surface
        DenseField::from_fn(n, n, n, |p| (0.5 - (p.norm() - r) / h).clamp(0.0, 1.0))
    }

    #[test]
    fn table_rows_are_triples() {
        for row in TRI_TABLE.iter() {
            let n = row.iter().take_while(|&&e| e >= 0).count();
            assert_eq!(n % 3, 0);
            assert!(row[n..].iter().all(|&e| e == -1));
        }
        assert!(TRI_TABLE[0][0] == -1 && TRI_TABLE[255][0] == -1);
    }

    #[test]
    fn sphere_area_and_watertight() {
        let f = sphere_field(128, 0.8);
        let m = marching_cubes(&f, 0.5);
        let area = 4.0 * std::f64::consts::PI * 0.64;
        assert!((m.surface_area() - area).abs() / area < 0.03, "{}", m.surface_area());
        assert!(m.is_watertight(), "{:?}", m.topology());
        assert!(m.signed_volume() > 0.0);
        for v in &m.vertices {
            assert!((f.query(v) - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn empty_and_full_fields() {
        assert!(marching_cubes(&DenseField::constant(8, 8, 8, 0.0), 0.5).is_empty());
        let full = marching_cubes(&DenseField::constant(6, 7, 8, 1.0), 0.5);
        assert!(full.is_watertight());
        assert!(full.signed_volume() > 0.0);
        let b = full.bbox();
        // the shell lies midway between the outer centers and the padding
        assert!((b.max.x - 1.0).abs() < 1e-9 && (b.min.z + 1.0).abs() < 1e-9);
    }

    #[test]
    fn iso_valued_field_gives_boundary_shell() {
        let cfg = TrainConfig {
            grid: [4, 4, 4],
            init_logit: 0.0,
            ..Default::default()
        };
        let g = sample_dense_grid(&Model::new(&cfg), 10);
        assert!(g.values.iter().all(|&v| v == 0.5));
        let m = marching_cubes(&g, 0.5);
        assert!(!m.is_empty());
        assert!(m.is_watertight(), "{:?}", m.topology());
        let b = m.bbox();
        assert!((b.max.x - 0.9).abs() < 1e-9, "{b:?}");
    }

    #[test]
    fn dense_grid_queries_voxel_centers() {
        let g = DenseField::from_fn(2, 2, 2, |p| if p.x > 0.0 { 1.0 } else { 0.0 });
        assert_eq!(g.values.len(), 8);
        assert_eq!(g.get(0, 0, 1), 1.0);
        assert_eq!(g.get(1, 1, 0), 0.0);
    }

    #[test]
    fn stable_under_small_shift() {
        let f = sphere_field(32, 0.6);
        let g = DenseField {
            values: f.values.iter().map(|v| (v + 0.001).clamp(0.0, 1.0)).collect(),
            ..f.clone()
        };
        let (a, b) = (marching_cubes(&f, 0.5), marching_cubes(&g, 0.5));
        assert_eq!(a.vertices.len(), b.vertices.len());
        let pitch = 2.0 / 32.0;
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            assert!((p - q).norm() <= 0.01 * pitch + 1e-12);
        }
    }
}
