//! Triangle meshes in normalized camera space and the queries built on them.
//!
//! The camera is orthographic: image plane is `xy`, depth is `z`, and the
//! front of an object is the side facing `+z`.

mod bvh;
pub mod fixtures;
pub mod io;
mod render;
mod sampling;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub use bvh::{Bvh, ClosestPoint, RayHit};
pub use io::{load_mesh, write_obj, write_ply};
pub use render::{pixel_center, render_normal_map, NormalMap, Side};
pub use sampling::{sample_surface, SurfaceSample};

/// Faces with area at or below this are rejected by [`TriangleMesh::new`].
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&Vec3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.min[i] && self.max[i] >= other.max[i])
    }
}

/// Scale and translation taking original coordinates into normalized space:
/// `normalized = (original - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn identity() -> Self {
        NormalizeTransform {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.center)) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + Vec3::from(self.center)
    }

    /// Converts a normalized-space length back to original units.
    pub fn length_to_original(&self, d: f64) -> f64 {
        d / self.scale
    }
}

/// Edge-sharing statistics of a mesh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    pub edges: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
}

impl Topology {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edges == 0 && self.non_manifold_edges == 0
    }
}

/// Indexed triangle mesh with per-corner normals.
///
/// `normal_indices[f][c]` selects the shading normal of corner `c` of face
/// `f`. Meshes read without normals get area-weighted vertex normals, in
/// which case `normal_indices == faces`.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
    pub normal_indices: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Validated mesh with computed area-weighted vertex normals.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        validate(&vertices, &faces)?;
        Ok(Self::from_parts_unchecked(vertices, faces))
    }

    /// Validated mesh with explicit per-corner normals.
    pub fn with_normals(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        normals: Vec<Vec3>,
        normal_indices: Vec<[u32; 3]>,
    ) -> Result<Self> {
        validate(&vertices, &faces)?;
        if normal_indices.len() != faces.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "{} normal index triples for {} faces",
                    normal_indices.len(),
                    faces.len()
                ),
            });
        }
        for (f, tri) in normal_indices.iter().enumerate() {
            for &i in tri {
                if i as usize >= normals.len() {
                    return Err(Error::IndexOutOfRange {
                        face: f,
                        index: i as i64,
                        count: normals.len(),
                    });
                }
            }
        }
        let normals = normals
            .into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::z))
            .collect();
        Ok(TriangleMesh {
            vertices,
            faces,
            normals,
            normal_indices,
        })
    }

    /// Skips validation; used for extracted meshes whose faces may be tiny.
    pub fn from_parts_unchecked(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        let normals = area_weighted_normals(&vertices, &faces);
        TriangleMesh {
            normal_indices: faces.clone(),
            vertices,
            faces,
            normals,
        }
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: Vec::new(),
            normal_indices: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized geometric normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_cross(f).try_normalize(0.0).unwrap_or_else(Vec3::z)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (a + b + c) / 3.0
    }

    /// Point on face `f` at barycentric coordinates `bary`.
    pub fn point_at(&self, f: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        a * bary[0] + b * bary[1] + c * bary[2]
    }

    /// Shading normal on face `f`, barycentrically interpolated and renormalized.
    pub fn interpolated_normal(&self, f: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.normal_indices[f];
        let n = self.normals[a as usize] * bary[0]
            + self.normals[b as usize] * bary[1]
            + self.normals[c as usize] * bary[2];
        n.try_normalize(1e-300).unwrap_or_else(|| self.face_normal(f))
    }

    pub fn bbox(&self) -> Aabb {
        let mut b = Aabb::empty();
        for v in &self.vertices {
            b.grow(v);
        }
        b
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn topology(&self) -> Topology {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::with_capacity(self.faces.len() * 2);
        for tri in &self.faces {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut t = Topology {
            edges: counts.len(),
            ..Default::default()
        };
        for &c in counts.values() {
            match c {
                2 => {}
                1 => t.boundary_edges += 1,
                _ => t.non_manifold_edges += 1,
            }
        }
        t
    }

    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.topology().is_watertight()
    }

    /// Errors unless every edge is shared by exactly two faces.
    pub fn require_watertight(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let t = self.topology();
        if t.is_watertight() {
            Ok(())
        } else {
            Err(Error::NotWatertight {
                boundary_edges: t.boundary_edges,
                non_manifold_edges: t.non_manifold_edges,
            })
        }
    }

    /// Applies `f` to every vertex and `g` to every shading normal.
    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3, g: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            normals: self
                .normals
                .iter()
                .map(|n| g(n).try_normalize(0.0).unwrap_or_else(Vec3::z))
                .collect(),
            normal_indices: self.normal_indices.clone(),
        }
    }

    pub fn transformed(&self, t: &NormalizeTransform) -> TriangleMesh {
        self.map(|v| t.apply(v), |n| *n)
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let vo = self.vertices.len() as u32;
        let no = self.normals.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.normals.extend_from_slice(&other.normals);
        self.faces
            .extend(other.faces.iter().map(|t| [t[0] + vo, t[1] + vo, t[2] + vo]));
        self.normal_indices
            .extend(other.normal_indices.iter().map(|t| [t[0] + no, t[1] + no, t[2] + no]));
    }
}

fn validate(vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    for (f, tri) in faces.iter().enumerate() {
        for &i in tri {
            if i as usize >= vertices.len() {
                return Err(Error::IndexOutOfRange {
                    face: f,
                    index: i as i64,
                    count: vertices.len(),
                });
            }
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(Error::DegenerateFace {
                face: f,
                reason: "repeated vertex",
            });
        }
        let [a, b, c] = tri.map(|i| vertices[i as usize]);
        if 0.5 * (b - a).cross(&(c - a)).norm() <= MIN_FACE_AREA {
            return Err(Error::DegenerateFace {
                face: f,
                reason: "zero area",
            });
        }
    }
    Ok(())
}

pub(crate) fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for tri in faces {
        let [a, b, c] = tri.map(|i| vertices[i as usize]);
        // cross product magnitude is twice the area, so this is area weighting
        let n = (b - a).cross(&(c - a));
        for &i in tri {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(1e-300).unwrap_or_else(Vec3::z))
        .collect()
}

/// Centers the bounding box at the origin and scales its longest side to 2.
pub fn normalize_to_camera_space(mesh: &TriangleMesh) -> Result<(TriangleMesh, NormalizeTransform)> {
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let bbox = mesh.bbox();
    let longest = bbox.extent().max();
    if !(longest > 0.0) {
        return Err(Error::DegenerateBounds);
    }
    let c = bbox.center();
    let t = NormalizeTransform {
        center: [c.x, c.y, c.z],
        scale: 2.0 / longest,
    };
    Ok((mesh.transformed(&t), t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;

    #[test]
    fn normalize_shifted_cube() {
        let cube = fixtures::box_mesh(Vec3::new(8.0, -2.0, -2.0), Vec3::new(12.0, 2.0, 2.0));
        let (n, t) = normalize_to_camera_space(&cube).unwrap();
        assert!((t.scale - 0.5).abs() < 1e-12);
        let b = n.bbox();
        assert!((b.min - Vec3::repeat(-1.0)).norm() < 1e-12);
        assert!((b.max - Vec3::repeat(1.0)).norm() < 1e-12);
        let back = t.invert(&n.vertices[0]);
        assert!((back - cube.vertices[0]).norm() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let (once, _) = normalize_to_camera_space(&fixtures::icosphere(2, 1.0)).unwrap();
        let (_, t) = normalize_to_camera_space(&once).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(Vec3::from(t.center).norm() < 1e-9);
    }

    #[test]
    fn normalize_slab_scales_proportionally() {
        let slab = fixtures::box_mesh(Vec3::new(0.0, 0.0, 0.0), Vec3::new(4.0, 2.0, 0.2));
        let (n, _) = normalize_to_camera_space(&slab).unwrap();
        let e = n.bbox().extent();
        assert!((e.x - 2.0).abs() < 1e-12);
        assert!((e.y - 1.0).abs() < 1e-12);
        assert!((e.z - 0.1).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_point_cloud_of_one_vertex() {
        let mut m = TriangleMesh::empty();
        m.vertices.push(Vec3::new(1.0, 1.0, 1.0));
        assert!(matches!(normalize_to_camera_space(&m), Err(Error::DegenerateBounds)));
        assert!(matches!(
            normalize_to_camera_space(&TriangleMesh::empty()),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 1]]),
            Err(Error::DegenerateFace { .. })
        ));
        let collinear = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(
            TriangleMesh::new(collinear, vec![[0, 1, 2]]),
            Err(Error::DegenerateFace { .. })
        ));
    }

    #[test]
    fn cube_topology_and_volume() {
        let cube = fixtures::unit_cube();
        assert_eq!(cube.vertices.len(), 8);
        assert_eq!(cube.faces.len(), 12);
        assert!(cube.is_watertight());
        assert!((cube.signed_volume() - 1.0).abs() < 1e-12);
        let mut open = cube.clone();
        open.faces.pop();
        assert_eq!(open.topology().boundary_edges, 3);
        assert!(open.require_watertight().is_err());
    }
}
