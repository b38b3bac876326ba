use super::Bvh;
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Viewer at `+z`, rays travel along `-z`.
    Front,
    /// Viewer at `-z`, rays travel along `+z`.
    Back,
}

/// Orthographic normal image over `[-1, 1]²`. Row `j` holds `y` increasing
/// with `j`; column `i` holds `x` increasing with `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub resolution: usize,
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl NormalMap {
    pub fn get(&self, i: usize, j: usize) -> Option<Vec3> {
        let k = j * self.resolution + i;
        self.mask[k].then(|| self.normals[k])
    }

    pub fn coverage(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// RGB payload for PFM export; uncovered pixels are zero.
    pub fn to_rgb(&self) -> Vec<[f32; 3]> {
        self.normals
            .iter()
            .zip(&self.mask)
            .map(|(n, &m)| if m { [n.x as f32, n.y as f32, n.z as f32] } else { [0.0; 3] })
            .collect()
    }
}

/// Center of pixel `i` on an `r`-pixel axis spanning `[-1, 1]`.
pub fn pixel_center(i: usize, r: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) * 2.0 / r as f64
}

pub fn render_normal_map(bvh: &Bvh, resolution: usize, side: Side) -> NormalMap {
    let b = bvh.bbox();
    let (z0, dir) = match side {
        Side::Front => (b.max.z.max(1.0) + 1.0, -Vec3::z()),
        Side::Back => (b.min.z.min(-1.0) - 1.0, Vec3::z()),
    };
    let n = resolution * resolution;
    let mut normals = vec![Vec3::zeros(); n];
    let mut mask = vec![false; n];
    for j in 0..resolution {
        let y = pixel_center(j, resolution);
        for i in 0..resolution {
            let x = pixel_center(i, resolution);
            if let Some(h) = bvh.raycast(&Vec3::new(x, y, z0), &dir).first() {
                normals[j * resolution + i] = h.normal;
                mask[j * resolution + i] = true;
            }
        }
    }
    NormalMap {
        resolution,
        normals,
        mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;

    #[test]
    fn slab_front_center_faces_camera() {
        let bvh = Bvh::build(fixtures::slab());
        let m = render_normal_map(&bvh, 33, Side::Front);
        let c = m.get(16, 16).unwrap();
        assert!((c - Vec3::z()).norm() < 1e-12);
        let back = render_normal_map(&bvh, 33, Side::Back);
        assert!((back.get(16, 16).unwrap() + Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn empty_pixels_are_masked() {
        let bvh = Bvh::build(fixtures::icosphere(2, 0.5));
        let m = render_normal_map(&bvh, 16, Side::Front);
        assert!(m.get(0, 0).is_none());
        assert!(m.coverage() > 0);
        for (n, &k) in m.normals.iter().zip(&m.mask) {
            if k {
                assert!((n.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sphere_normals_match_analytic() {
        let bvh = Bvh::build(fixtures::icosphere(3, 1.0));
        let r = 64;
        let m = render_normal_map(&bvh, r, Side::Front);
        let mut worst: f64 = 0.0;
        for j in 0..r {
            for i in 0..r {
                let (x, y) = (pixel_center(i, r), pixel_center(j, r));
                // stay off the silhouette where the polygonal outline deviates
                if x * x + y * y > 0.9 * 0.9 {
                    continue;
                }
                let n = m.get(i, j).unwrap();
                let analytic = Vec3::new(x, y, (1.0 - x * x - y * y).sqrt());
                worst = worst.max(n.angle(&analytic).to_degrees());
            }
        }
        assert!(worst < 2.0, "{worst}");
    }
}
