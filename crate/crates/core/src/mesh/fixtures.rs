//! Procedural watertight test meshes, all in normalized camera space.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{io::write_obj, Bvh, TriangleMesh};
use crate::error::Result;
use crate::schemes::regions::{thin_face_weights, write_region_weights};
use crate::Vec3;

/// `x` of the thin fin's mid-plane. Chosen on a voxel-center plane of a
/// 64³ grid over `[-1, 1]³` so the fin owns exactly one voxel layer there.
pub const FIN_CENTER_X: f64 = 0.015625;
pub const FIN_HALF_WIDTH: f64 = 0.01;
/// Fin extent: `y ∈ [0, 1]`, `z ∈ [-0.3, 0.3]` (half of that in `z` for the partial fin).
pub const FIN_Y: [f64; 2] = [0.0, 1.0];
pub const FIN_Z: [f64; 2] = [-0.3, 0.3];
pub const WAVE_AMPLITUDE: f64 = 0.02;
pub const WAVE_CYCLES: f64 = 2.0;

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    normal_indices: Vec<[u32; 3]>,
}

impl Builder {
    fn vertex(&mut self, p: Vec3) -> u32 {
        self.vertices.push(p);
        self.vertices.len() as u32 - 1
    }

    fn normal(&mut self, n: Vec3) -> u32 {
        self.normals.push(n.normalize());
        self.normals.len() as u32 - 1
    }

    /// Adds a triangle, flipping its winding to agree with `outward`.
    fn tri(&mut self, v: [u32; 3], n: [u32; 3], outward: Vec3) {
        let [a, b, c] = v.map(|i| self.vertices[i as usize]);
        if (b - a).cross(&(c - a)).dot(&outward) < 0.0 {
            self.faces.push([v[0], v[2], v[1]]);
            self.normal_indices.push([n[0], n[2], n[1]]);
        } else {
            self.faces.push(v);
            self.normal_indices.push(n);
        }
    }

    /// Quad with corners in cyclic order.
    fn quad(&mut self, v: [u32; 4], n: [u32; 4], outward: Vec3) {
        self.tri([v[0], v[1], v[2]], [n[0], n[1], n[2]], outward);
        self.tri([v[0], v[2], v[3]], [n[0], n[2], n[3]], outward);
    }

    fn finish(self) -> TriangleMesh {
        TriangleMesh::with_normals(self.vertices, self.faces, self.normals, self.normal_indices)
            .expect("fixture construction produces a valid mesh")
    }
}

/// Union of cells of a non-uniform rectilinear grid, with flat face normals.
/// `occupied(i, j, k)` selects cell `[xs[i], xs[i+1]] × ...`. Cells may not
/// touch along an edge only.
pub fn polycube(xs: &[f64], ys: &[f64], zs: &[f64], occupied: impl Fn(usize, usize, usize) -> bool) -> TriangleMesh {
    let lines = [xs, ys, zs];
    let dims = [xs.len() - 1, ys.len() - 1, zs.len() - 1];
    let occ = |c: [i64; 3]| -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < dims[a]) && occupied(c[0] as usize, c[1] as usize, c[2] as usize)
    };
    let mut b = Builder::default();
    let axis_normals: Vec<[u32; 2]> = (0..3)
        .map(|a| {
            let mut e = Vec3::zeros();
            e[a] = 1.0;
            [b.normal(-e), b.normal(e)]
        })
        .collect();
    let mut lattice: HashMap<[usize; 3], u32> = HashMap::new();
    let mut corner = |b: &mut Builder, p: [usize; 3]| -> u32 {
        *lattice
            .entry(p)
            .or_insert_with(|| b.vertex(Vec3::new(xs[p[0]], ys[p[1]], zs[p[2]])))
    };
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for plane in 0..lines[axis].len() {
            for i in 0..dims[u] {
                for j in 0..dims[v] {
                    let mut lo = [0i64; 3];
                    lo[axis] = plane as i64 - 1;
                    lo[u] = i as i64;
                    lo[v] = j as i64;
                    let mut hi = lo;
                    hi[axis] += 1;
                    let (a, c) = (occ(lo), occ(hi));
                    if a == c {
                        continue;
                    }
                    let sign = if a { 1.0 } else { -1.0 };
                    let mut outward = Vec3::zeros();
                    outward[axis] = sign;
                    let n = axis_normals[axis][usize::from(a)];
                    let mut idx = [[0usize; 3]; 4];
                    for (k, (du, dv)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                        idx[k][axis] = plane;
                        idx[k][u] = i + du;
                        idx[k][v] = j + dv;
                    }
                    let q = idx.map(|p| corner(&mut b, p));
                    b.quad(q, [n; 4], outward);
                }
            }
        }
    }
    b.finish()
}

pub fn box_mesh(min: Vec3, max: Vec3) -> TriangleMesh {
    polycube(&[min.x, max.x], &[min.y, max.y], &[min.z, max.z], |_, _, _| true)
}

/// Axis-aligned cube of side 1 centered at the origin.
pub fn unit_cube() -> TriangleMesh {
    box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5))
}

/// `[-1, 1]² × [-0.1, 0.1]`: thickness 0.2, top face at `z = 0.1`.
pub fn slab() -> TriangleMesh {
    box_mesh(Vec3::new(-1.0, -1.0, -0.1), Vec3::new(1.0, 1.0, 0.1))
}

pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let normals = verts.clone();
    let vertices = verts.iter().map(|v| v * radius).collect();
    let ni = faces.clone();
    TriangleMesh::with_normals(vertices, faces, normals, ni).expect("icosphere is valid")
}

/// Closed cylinder along `y` with radius `radius` and `y ∈ [-half_height, half_height]`.
pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> TriangleMesh {
    let mut b = Builder::default();
    let ang = |i: usize| 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
    let bottom: Vec<u32> = (0..segments)
        .map(|i| b.vertex(Vec3::new(radius * ang(i).cos(), -half_height, radius * ang(i).sin())))
        .collect();
    let top: Vec<u32> = (0..segments)
        .map(|i| b.vertex(Vec3::new(radius * ang(i).cos(), half_height, radius * ang(i).sin())))
        .collect();
    let cb = b.vertex(Vec3::new(0.0, -half_height, 0.0));
    let ct = b.vertex(Vec3::new(0.0, half_height, 0.0));
    let radial: Vec<u32> = (0..segments)
        .map(|i| b.normal(Vec3::new(ang(i).cos(), 0.0, ang(i).sin())))
        .collect();
    let up = b.normal(Vec3::y());
    let down = b.normal(-Vec3::y());
    for i in 0..segments {
        let j = (i + 1) % segments;
        let mid = 0.5 * (ang(i) + ang(i + 1));
        let out = Vec3::new(mid.cos(), 0.0, mid.sin());
        b.quad(
            [bottom[i], bottom[j], top[j], top[i]],
            [radial[i], radial[j], radial[j], radial[i]],
            out,
        );
        b.tri([ct, top[i], top[j]], [up; 3], Vec3::y());
        b.tri([cb, bottom[i], bottom[j]], [down; 3], -Vec3::y());
    }
    b.finish()
}

/// Torus around the `z` axis: the hole is visible from the camera.
pub fn torus(major: f64, minor: f64, rings: usize, sides: usize) -> TriangleMesh {
    let mut b = Builder::default();
    let mut vid = vec![vec![0u32; sides]; rings];
    let mut nid = vec![vec![0u32; sides]; rings];
    for (i, (vrow, nrow)) in vid.iter_mut().zip(nid.iter_mut()).enumerate() {
        let u = 2.0 * std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..sides {
            let v = 2.0 * std::f64::consts::PI * j as f64 / sides as f64;
            let n = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
            let c = Vec3::new(major * u.cos(), major * u.sin(), 0.0);
            vrow[j] = b.vertex(c + n * minor);
            nrow[j] = b.normal(n);
        }
    }
    for i in 0..rings {
        let i2 = (i + 1) % rings;
        for j in 0..sides {
            let j2 = (j + 1) % sides;
            let q = [vid[i][j], vid[i2][j], vid[i2][j2], vid[i][j2]];
            let n = [nid[i][j], nid[i2][j], nid[i2][j2], nid[i][j2]];
            let out: Vec3 = n.iter().map(|&k| b.normals[k as usize]).sum();
            b.quad(q, n, out);
        }
    }
    b.finish()
}

fn fin_box(full: bool) -> TriangleMesh {
    let c = FIN_CENTER_X;
    let w = FIN_HALF_WIDTH;
    let xs = [-0.6, c - w, c + w, 0.6];
    let ys = [-1.0, FIN_Y[0], FIN_Y[1]];
    let zs = [-0.4, FIN_Z[0], 0.0, FIN_Z[1], 0.4];
    polycube(&xs, &ys, &zs, |i, j, k| j == 0 || (i == 1 && j == 1 && (k == 1 || (full && k == 2))))
}

/// Box body `[-0.6, 0.6] × [-1, 0] × [-0.4, 0.4]` carrying a fin of
/// thickness 0.02 along `x` that rises to `y = 1`.
pub fn thin_fin() -> TriangleMesh {
    fin_box(true)
}

/// Same frame as [`thin_fin`] with the fin cut to `z ∈ [-0.3, 0]`.
pub fn partial_fin() -> TriangleMesh {
    fin_box(false)
}

/// True for points inside the fin's bounding region (above the body).
pub fn in_fin_region(p: &Vec3) -> bool {
    (p.x - FIN_CENTER_X).abs() <= 2.0 * FIN_HALF_WIDTH + 0.04
        && p.y > FIN_Y[0]
        && p.y <= FIN_Y[1]
        && p.z >= FIN_Z[0]
        && p.z <= FIN_Z[1]
}

/// Height of the wavy top surface.
pub fn wavy_top(x: f64) -> f64 {
    0.1 + WAVE_AMPLITUDE * (2.0 * std::f64::consts::PI * WAVE_CYCLES * x).sin()
}

/// Slab over `[-1, 1]²` with a sinusoidal top (`z = 0.1 + 0.02 sin(4πx)`) and flat bottom at `z = -0.12`.
pub fn wavy_slab(cells: usize) -> TriangleMesh {
    let mut b = Builder::default();
    let n = cells;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / n as f64;
    let k = 2.0 * std::f64::consts::PI * WAVE_CYCLES;
    let mut top = vec![vec![0u32; n + 1]; n + 1];
    let mut topn = vec![vec![0u32; n + 1]; n + 1];
    let mut bot = vec![vec![0u32; n + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=n {
            let (x, y) = (coord(i), coord(j));
            top[i][j] = b.vertex(Vec3::new(x, y, wavy_top(x)));
            topn[i][j] = b.normal(Vec3::new(-WAVE_AMPLITUDE * k * (k * x).cos(), 0.0, 1.0));
            bot[i][j] = b.vertex(Vec3::new(x, y, -0.12));
        }
    }
    let down = b.normal(-Vec3::z());
    let side: Vec<u32> = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y()]
        .into_iter()
        .map(|e| b.normal(e))
        .collect();
    for i in 0..n {
        for j in 0..n {
            b.quad(
                [top[i][j], top[i + 1][j], top[i + 1][j + 1], top[i][j + 1]],
                [topn[i][j], topn[i + 1][j], topn[i + 1][j + 1], topn[i][j + 1]],
                Vec3::z(),
            );
            b.quad(
                [bot[i][j], bot[i + 1][j], bot[i + 1][j + 1], bot[i][j + 1]],
                [down; 4],
                -Vec3::z(),
            );
        }
    }
    for s in 0..n {
        // x = +1, x = -1, y = +1, y = -1 walls
        let walls = [
            ([top[n][s], top[n][s + 1], bot[n][s + 1], bot[n][s]], side[0], Vec3::x()),
            ([top[0][s], top[0][s + 1], bot[0][s + 1], bot[0][s]], side[1], -Vec3::x()),
            ([top[s][n], top[s + 1][n], bot[s + 1][n], bot[s][n]], side[2], Vec3::y()),
            ([top[s][0], top[s + 1][0], bot[s + 1][0], bot[s][0]], side[3], -Vec3::y()),
        ];
        for (q, nn, out) in walls {
            b.quad(q, [nn; 4], out);
        }
    }
    b.finish()
}

/// Named fixture set written by [`write_all`].
pub fn all() -> Vec<(&'static str, TriangleMesh)> {
    vec![
        ("cube", unit_cube()),
        ("icosphere", icosphere(3, 1.0)),
        ("slab", slab()),
        ("cylinder", cylinder(0.5, 1.0, 64)),
        ("torus", torus(0.7, 0.3, 64, 32)),
        ("thin_fin", thin_fin()),
        ("partial_fin", partial_fin()),
        ("wavy_slab", wavy_slab(48)),
    ]
}

/// Writes every fixture as `<name>.obj` plus a `<name>.regions` file that
/// weights faces thinner than `tau_thin` by `w_thin`.
pub fn write_all(dir: impl AsRef<Path>, tau_thin: f64, w_thin: f64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, mesh) in all() {
        let obj = dir.join(format!("{name}.obj"));
        write_obj(&mesh, &obj)?;
        let bvh = Bvh::build(mesh);
        let weights = thin_face_weights(&bvh, tau_thin, w_thin);
        let regions = dir.join(format!("{name}.regions"));
        write_region_weights(&weights, &regions)?;
        written.push(obj);
        written.push(regions);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_fixtures_are_watertight_and_outward() {
        for (name, m) in all() {
            assert!(m.is_watertight(), "{name}: {:?}", m.topology());
            assert!(m.signed_volume() > 0.0, "{name}");
            let b = m.bbox();
            assert!(b.extent().max() <= 2.0 + 1e-12, "{name}");
        }
    }

    #[test]
    fn fixture_volumes() {
        assert!((unit_cube().signed_volume() - 1.0).abs() < 1e-12);
        let fin = 0.6 * 1.0 * 2.0 * FIN_HALF_WIDTH;
        assert!((thin_fin().signed_volume() - (1.2 * 0.8 + fin)).abs() < 1e-12);
        assert!((partial_fin().signed_volume() - (1.2 * 0.8 + fin / 2.0)).abs() < 1e-12);
        let v = std::f64::consts::PI * 0.25 * 2.0;
        assert!((cylinder(0.5, 1.0, 256).signed_volume() - v).abs() / v < 1e-3);
    }

    #[test]
    fn icosphere_counts() {
        let s = icosphere(3, 1.0);
        assert_eq!(s.vertices.len(), 642);
        assert_eq!(s.faces.len(), 1280);
    }

    #[test]
    fn thin_fin_is_normalized() {
        let b = thin_fin().bbox();
        assert_eq!(b.min, Vec3::new(-0.6, -1.0, -0.4));
        assert_eq!(b.max, Vec3::new(0.6, 1.0, 0.4));
    }
}
