use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::Vec3;

/// A point on the mesh surface with its interpolated shading normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub face: usize,
    pub bary: [f64; 3],
}

impl SurfaceSample {
    pub fn on_face(mesh: &TriangleMesh, face: usize, bary: [f64; 3]) -> Self {
        SurfaceSample {
            position: mesh.point_at(face, bary),
            normal: mesh.interpolated_normal(face, bary),
            face,
            bary,
        }
    }
}

/// Draws `n` points with face probability proportional to area times the
/// optional per-face weight, uniformly placed within each face.
pub fn sample_surface<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    n: usize,
    face_weights: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<SurfaceSample>> {
    let dist = face_distribution(mesh, face_weights)?;
    Ok((0..n)
        .map(|_| {
            let f = dist.sample(rng);
            SurfaceSample::on_face(mesh, f, uniform_barycentric(rng))
        })
        .collect())
}

pub(crate) fn face_distribution(mesh: &TriangleMesh, face_weights: Option<&[f64]>) -> Result<WeightedIndex<f64>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let areas = mesh.face_areas();
    let weights: Vec<f64> = match face_weights {
        Some(w) => {
            if w.len() != areas.len() {
                return Err(Error::WeightCount {
                    got: w.len(),
                    expected: areas.len(),
                });
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::config("face_weights", "weights must be finite and non-negative"));
            }
            areas.iter().zip(w).map(|(a, w)| a * w).collect()
        }
        None => areas,
    };
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::ZeroWeights);
    }
    WeightedIndex::new(&weights).map_err(|_| Error::ZeroWeights)
}

/// Uniform point in a triangle via the square-root warp.
pub fn uniform_barycentric<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let su = rng.random::<f64>().sqrt();
    let v = rng.random::<f64>();
    [1.0 - su, su * (1.0 - v), su * v]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_faces_receive_equal_share() {
        let cube = fixtures::unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 60_000;
        let samples = sample_surface(&cube, n, None, &mut rng).unwrap();
        let mut per_side = [0usize; 6];
        for s in &samples {
            let k = s.normal.iamax();
            let side = 2 * k + usize::from(s.normal[k] > 0.0);
            per_side[side] += 1;
        }
        for c in per_side {
            let frac = c as f64 / n as f64;
            assert!((frac - 1.0 / 6.0).abs() < 0.01, "{frac}");
        }
    }

    #[test]
    fn single_weighted_face() {
        let cube = fixtures::unit_cube();
        let mut w = vec![0.0; cube.faces.len()];
        w[5] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sample_surface(&cube, 500, Some(&w), &mut rng).unwrap() {
            assert_eq!(s.face, 5);
        }
        let zero = vec![0.0; cube.faces.len()];
        assert!(matches!(
            sample_surface(&cube, 1, Some(&zero), &mut rng),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn one_sample_lies_on_its_face() {
        let sphere = fixtures::icosphere(3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sample_surface(&sphere, 1, None, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        let [a, b, c] = sphere.triangle(s[0].face);
        let n = (b - a).cross(&(c - a)).normalize();
        assert!((s[0].position - a).dot(&n).abs() < 1e-9);
        assert!(s[0].bary.iter().all(|&w| w >= 0.0));
        assert!((s[0].normal.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reproducible_under_seed() {
        let m = fixtures::torus(0.7, 0.3, 24, 12);
        let a = sample_surface(&m, 100, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_surface(&m, 100, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
