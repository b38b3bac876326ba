use super::{Aabb, SurfaceSample, TriangleMesh};
use crate::Vec3;

const LEAF_SIZE: usize = 4;
/// Hits closer than this to the ray origin are ignored.
pub const MIN_HIT_T: f64 = 1e-9;
/// Barycentric margin below which a hit counts as edge-grazing.
const GRAZE_EPS: f64 = 1e-9;
/// Inclusive edge tolerance of the ray-triangle test.
const EDGE_EPS: f64 = 1e-12;
const JITTER_ANGLE: f64 = 1e-5;
const JITTER_RETRIES: usize = 8;
/// Offset used when casting from a surface point into the interior.
pub const SURFACE_OFFSET: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
struct Node {
    bbox: Aabb,
    /// Leaf: first index into `order`. Internal: left child.
    first: u32,
    /// Leaf: face count. Internal: zero.
    count: u32,
    right: u32,
}

/// Bounding volume hierarchy over the faces of an owned mesh.
#[derive(Clone, Debug)]
pub struct Bvh {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub face: usize,
    pub bary: [f64; 3],
    pub point: Vec3,
    pub normal: Vec3,
    /// The ray crosses from outside to inside (direction opposes the face normal).
    pub entering: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub distance: f64,
    pub normal: Vec3,
    pub face: usize,
    pub bary: [f64; 3],
}

struct RawHits {
    hits: Vec<RayHit>,
    grazing: bool,
}

impl Bvh {
    pub fn build(mesh: TriangleMesh) -> Bvh {
        let n = mesh.faces.len();
        let boxes: Vec<Aabb> = (0..n)
            .map(|f| {
                let mut b = Aabb::empty();
                for v in mesh.triangle(f) {
                    b.grow(&v);
                }
                b.min -= Vec3::repeat(1e-9);
                b.max += Vec3::repeat(1e-9);
                b
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut bvh = Bvh {
            mesh,
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: (0..n as u32).collect(),
        };
        if n > 0 {
            bvh.build_node(0, n, &boxes, &centroids);
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize, boxes: &[Aabb], centroids: &[Vec3]) -> u32 {
        let idx = self.nodes.len() as u32;
        let mut bbox = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &f in &self.order[start..end] {
            bbox = bbox.merge(&boxes[f as usize]);
            cbox.grow(&centroids[f as usize]);
        }
        self.nodes.push(Node {
            bbox,
            first: start as u32,
            count: (end - start) as u32,
            right: 0,
        });
        let extent = cbox.extent();
        let axis = extent.imax();
        if end - start <= LEAF_SIZE || extent[axis] <= 0.0 {
            return idx;
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        let left = self.build_node(start, mid, boxes, centroids);
        let right = self.build_node(mid, end, boxes, centroids);
        let node = &mut self.nodes[idx as usize];
        node.first = left;
        node.count = 0;
        node.right = right;
        idx
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriangleMesh {
        self.mesh
    }

    pub fn bbox(&self) -> Aabb {
        self.nodes.first().map(|n| n.bbox).unwrap_or_else(Aabb::empty)
    }

    /// Checks the structural invariants: each face in exactly one leaf and
    /// every node box containing its children.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![0u32; self.mesh.faces.len()];
        for node in &self.nodes {
            if node.count > 0 {
                for &f in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    seen[f as usize] += 1;
                }
            } else {
                let l = &self.nodes[node.first as usize];
                let r = &self.nodes[node.right as usize];
                if !node.bbox.contains(&l.bbox) || !node.bbox.contains(&r.bbox) {
                    return false;
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    fn leaf_faces(&self, node: &Node) -> &[u32] {
        &self.order[node.first as usize..(node.first + node.count) as usize]
    }

    fn raycast_raw(&self, origin: &Vec3, dir: &Vec3) -> RawHits {
        let mut out = RawHits {
            hits: Vec::new(),
            grazing: false,
        };
        if self.nodes.is_empty() {
            return out;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if !ray_box(origin, &inv, &node.bbox) {
                continue;
            }
            if node.count == 0 {
                stack.push(node.first);
                stack.push(node.right);
                continue;
            }
            for &f in self.leaf_faces(node) {
                let f = f as usize;
                let [a, b, c] = self.mesh.triangle(f);
                if let Some((t, u, v)) = ray_triangle(origin, dir, &a, &b, &c) {
                    if t <= MIN_HIT_T {
                        continue;
                    }
                    let bary = [1.0 - u - v, u, v];
                    if bary.iter().any(|&w| w < GRAZE_EPS) {
                        out.grazing = true;
                    }
                    let cross = (b - a).cross(&(c - a));
                    out.hits.push(RayHit {
                        t,
                        face: f,
                        bary,
                        point: origin + dir * t,
                        normal: self.mesh.interpolated_normal(f, bary),
                        entering: dir.dot(&cross) < 0.0,
                    });
                }
            }
        }
        out.hits
            .sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
        // a ray through a shared edge or vertex reports one hit per incident face
        let mut merged: Vec<RayHit> = Vec::with_capacity(out.hits.len());
        for h in out.hits.drain(..) {
            if let Some(last) = merged.last() {
                if (h.t - last.t).abs() <= 1e-9 * h.t.abs().max(1.0) && h.entering == last.entering {
                    continue;
                }
            }
            merged.push(h);
        }
        out.hits = merged;
        out
    }

    /// All intersections along the ray with `t > 1e-9`, sorted by `t`.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Vec<RayHit> {
        self.raycast_raw(origin, dir).hits
    }

    /// Raycast that retries with a slightly jittered direction while any hit
    /// grazes an edge. Returns the hits of the last attempt and whether it
    /// was still grazing.
    pub fn raycast_jittered(&self, origin: &Vec3, dir: &Vec3) -> (Vec<RayHit>, bool) {
        let mut raw = self.raycast_raw(origin, dir);
        if !raw.grazing {
            return (raw.hits, false);
        }
        let (u, w) = orthonormal_pair(dir);
        for k in 1..=JITTER_RETRIES {
            // golden-angle spiral keeps successive retries in distinct directions
            let phi = k as f64 * 2.399_963_229_728_653;
            let offset = (u * phi.cos() + w * phi.sin()) * (JITTER_ANGLE * k as f64);
            let d = (dir + offset).normalize();
            raw = self.raycast_raw(origin, &d);
            if !raw.grazing {
                return (raw.hits, false);
            }
        }
        (raw.hits, true)
    }

    /// Ray-parity inside test along a fixed oblique direction.
    pub fn is_inside(&self, p: &Vec3) -> bool {
        let b = self.bbox();
        if (0..3).any(|i| p[i] < b.min[i] || p[i] > b.max[i]) {
            return false;
        }
        let dir = inside_ray_direction();
        let (hits, grazing) = self.raycast_jittered(p, &dir);
        let count = if grazing {
            // persistent grazing hits are treated as misses
            hits.iter()
                .filter(|h| h.bary.iter().all(|&w| w >= GRAZE_EPS))
                .count()
        } else {
            hits.len()
        };
        count % 2 == 1
    }

    /// Exact nearest surface point.
    pub fn closest_point(&self, p: &Vec3) -> ClosestPoint {
        assert!(!self.nodes.is_empty(), "closest_point on an empty mesh");
        let mut best_d2 = f64::INFINITY;
        let mut best = (0usize, Vec3::zeros(), [1.0, 0.0, 0.0]);
        let mut stack = vec![(0u32, 0.0f64)];
        while let Some((i, d2)) = stack.pop() {
            if d2 >= best_d2 {
                continue;
            }
            let node = &self.nodes[i as usize];
            if node.count > 0 {
                for &f in self.leaf_faces(node) {
                    let f = f as usize;
                    let [a, b, c] = self.mesh.triangle(f);
                    let (q, bary) = closest_on_triangle(p, &a, &b, &c);
                    let d = (q - p).norm_squared();
                    if d < best_d2 {
                        best_d2 = d;
                        best = (f, q, bary);
                    }
                }
                continue;
            }
            let l = node.first;
            let r = node.right;
            let dl = self.nodes[l as usize].bbox.distance_squared(p);
            let dr = self.nodes[r as usize].bbox.distance_squared(p);
            // nearer child popped first
            if dl < dr {
                stack.push((r, dr));
                stack.push((l, dl));
            } else {
                stack.push((l, dl));
                stack.push((r, dr));
            }
        }
        let (face, point, bary) = best;
        ClosestPoint {
            point,
            distance: best_d2.sqrt(),
            normal: self.mesh.interpolated_normal(face, bary),
            face,
            bary,
        }
    }

    /// Signed distance, positive inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = self.closest_point(p).distance;
        if self.is_inside(p) {
            d
        } else {
            -d
        }
    }

    /// Wall thickness below a surface point: distance along the inward
    /// normal to the first exiting hit. `None` when no exit is found.
    pub fn local_thickness(&self, s: &SurfaceSample) -> Option<f64> {
        let inward = -s.normal;
        let origin = s.position + inward * SURFACE_OFFSET;
        let (hits, _) = self.raycast_jittered(&origin, &inward);
        hits.iter()
            .find(|h| !h.entering)
            .map(|h| h.t + SURFACE_OFFSET)
    }

    /// Local thickness measured at the centroid of each face.
    pub fn face_thickness(&self) -> Vec<Option<f64>> {
        let third = [1.0 / 3.0; 3];
        (0..self.mesh.faces.len())
            .map(|f| {
                let s = SurfaceSample {
                    position: self.mesh.point_at(f, third),
                    normal: self.mesh.interpolated_normal(f, third),
                    face: f,
                    bary: third,
                };
                self.local_thickness(&s)
            })
            .collect()
    }
}

/// Fixed direction of the inside-test ray. Oblique so that it does not run
/// along the axis-aligned edges common in fixtures.
pub fn inside_ray_direction() -> Vec3 {
    Vec3::new(0.314_159, 0.271_828, 0.911_231).normalize()
}

fn orthonormal_pair(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = d.cross(&helper).normalize();
    let w = d.cross(&u);
    (u, w)
}

fn ray_box(o: &Vec3, inv: &Vec3, b: &Aabb) -> bool {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        let t1 = (b.min[i] - o[i]) * inv[i];
        let t2 = (b.max[i] - o[i]) * inv[i];
        // NaN (0 * inf) comparisons fall through and leave the bound unchanged
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmax >= tmin.max(0.0)
}

/// Möller-Trumbore with inclusive edges. Returns `(t, u, v)`.
pub(crate) fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() <= 1e-14 * e1.norm() * e2.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    Some((e2.dot(&q) * inv, u, v))
}

/// Closest point on triangle `abc` to `p`, with barycentric coordinates.
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{fixtures, sample_surface};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_bvh() -> Bvh {
        Bvh::build(fixtures::unit_cube())
    }

    #[test]
    fn structure_invariants() {
        assert!(cube_bvh().check_invariants());
        assert!(Bvh::build(fixtures::icosphere(3, 1.0)).check_invariants());
        assert!(Bvh::build(fixtures::torus(0.7, 0.3, 48, 24)).check_invariants());
    }

    #[test]
    fn cube_inside_outside() {
        let b = cube_bvh();
        assert!(b.is_inside(&Vec3::zeros()));
        assert!(!b.is_inside(&Vec3::new(0.0, 0.0, 0.9)));
        assert!(b.is_inside(&Vec3::new(0.49, -0.49, 0.3)));
        assert!(!b.is_inside(&Vec3::new(0.51, 0.0, 0.0)));
    }

    #[test]
    fn cube_raycast_through_face_diagonal() {
        let b = cube_bvh();
        // (0, 0) lies on the diagonal splitting each cube face
        let hits = b.raycast(&Vec3::new(0.0, 0.0, -2.0), &Vec3::z());
        assert_eq!(hits.len(), 2);
        assert!((hits[0].t - 1.5).abs() < 1e-12 && hits[0].entering);
        assert!((hits[1].t - 2.5).abs() < 1e-12 && !hits[1].entering);
        assert!(b.raycast(&Vec3::new(2.0, 0.0, -2.0), &Vec3::z()).is_empty());
    }

    #[test]
    fn torus_hole_and_tube() {
        let b = Bvh::build(fixtures::torus(0.7, 0.3, 48, 24));
        assert!(b.raycast(&Vec3::new(0.0, 0.0, -2.0), &Vec3::z()).is_empty());
        let hits = b.raycast(&Vec3::new(0.7, 0.0, -2.0), &Vec3::z());
        assert_eq!(hits.len(), 2);
        // analytic tube crossing at z = +-0.3, polygonal tube is slightly inside
        assert!((hits[0].t - 1.7).abs() < 5e-3);
        assert!((hits[1].t - 2.3).abs() < 5e-3);
    }

    #[test]
    fn closest_point_cases() {
        let b = cube_bvh();
        let c = b.closest_point(&Vec3::new(0.0, 0.0, 0.7));
        assert!((c.point - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        assert!((c.distance - 0.2).abs() < 1e-12);
        let v = b.mesh().vertices[3];
        assert!(b.closest_point(&v).distance < 1e-15);

        let s = Bvh::build(fixtures::icosphere(3, 1.0));
        let d = s.closest_point(&Vec3::zeros()).distance;
        // the nearest face plane of the tessellation, computed directly
        let m = s.mesh();
        let plane = (0..m.faces.len())
            .map(|f| m.face_normal(f).dot(&m.triangle(f)[0]).abs())
            .fold(f64::INFINITY, f64::min);
        assert!((d - plane).abs() < 1e-12, "{d} vs {plane}");
        // largest faces of a subdiv-3 icosphere sag about 4.5e-3 below the sphere
        assert!((d - 1.0).abs() < 5e-3, "{d}");
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let mesh = fixtures::torus(0.7, 0.3, 24, 12);
        let b = Bvh::build(mesh.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = Vec3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            let brute = (0..mesh.faces.len())
                .map(|f| {
                    let [a, bb, c] = mesh.triangle(f);
                    (closest_on_triangle(&p, &a, &bb, &c).0 - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((b.closest_point(&p).distance - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn closest_distance_lower_bounds_surface_samples() {
        let b = Bvh::build(fixtures::torus(0.7, 0.3, 48, 24));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = sample_surface(b.mesh(), 100, None, &mut rng).unwrap();
        for _ in 0..50 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let d = b.closest_point(&p).distance;
            for s in &samples {
                assert!(d <= (s.position - p).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn parity_flips_at_crossings() {
        let b = Bvh::build(fixtures::torus(0.7, 0.3, 48, 24));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let o = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), -1.5);
            let d = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0).normalize();
            let hits = b.raycast(&o, &d);
            assert!(!b.is_inside(&o));
            let mut inside = false;
            for (k, h) in hits.iter().enumerate() {
                inside = !inside;
                let next_t = hits.get(k + 1).map(|n| n.t).unwrap_or(h.t + 1.0);
                if next_t - h.t < 1e-6 {
                    continue;
                }
                let mid = o + d * (0.5 * (h.t + next_t));
                assert_eq!(b.is_inside(&mid), inside);
            }
        }
    }

    #[test]
    fn thickness_of_slab_and_sphere() {
        let b = Bvh::build(fixtures::slab());
        let s = SurfaceSample {
            position: Vec3::new(0.3, -0.2, 0.1),
            normal: Vec3::z(),
            face: 0,
            bary: [1.0, 0.0, 0.0],
        };
        assert!((b.local_thickness(&s).unwrap() - 0.2).abs() < 1e-6);

        let sphere = Bvh::build(fixtures::icosphere(3, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sample_surface(sphere.mesh(), 50, None, &mut rng).unwrap() {
            let t = sphere.local_thickness(&s).unwrap();
            assert!((t - 2.0).abs() < 1e-2, "{t}");
        }
    }

    #[test]
    fn thickness_of_thin_fin() {
        let b = Bvh::build(fixtures::thin_fin());
        let s = SurfaceSample {
            position: Vec3::new(fixtures::FIN_CENTER_X + fixtures::FIN_HALF_WIDTH, 0.5, 0.1),
            normal: Vec3::x(),
            face: 0,
            bary: [1.0, 0.0, 0.0],
        };
        assert!((b.local_thickness(&s).unwrap() - 0.02).abs() < 1e-4);
    }

    #[test]
    fn thickness_bounded_by_diagonal() {
        for mesh in [fixtures::thin_fin(), fixtures::torus(0.7, 0.3, 48, 24), fixtures::cylinder(0.5, 1.0, 48)] {
            let b = Bvh::build(mesh);
            let diag = b.bbox().diagonal();
            for t in b.face_thickness() {
                assert!(t.unwrap() <= diag);
            }
        }
    }
}
