use crate::mesh::pixel_center;
use crate::schemes::SamplePoint;
use crate::Vec3;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trainable `D×H×W` logit volume queried as sigmoid-then-trilinear
/// occupancy. Voxel centers sit at the pixel centers of each axis over
/// `[-1, 1]`; queries outside the centers clamp to the boundary cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TriGrid {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// `theta[(d * height + j) * width + i]`, `d` along `z`.
    pub theta: Vec<f64>,
}

/// The eight voxels touched by a query and their interpolation weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

fn axis(c: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let u = ((c + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, i + 1, u - i as f64)
}

impl TriGrid {
    pub fn new(depth: usize, height: usize, width: usize, logit: f64) -> Self {
        assert!(depth >= 1 && height >= 1 && width >= 1);
        TriGrid {
            depth,
            height,
            width,
            theta: vec![logit; depth * height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn index(&self, d: usize, j: usize, i: usize) -> usize {
        (d * self.height + j) * self.width + i
    }

    pub fn center(&self, d: usize, j: usize, i: usize) -> Vec3 {
        Vec3::new(
            pixel_center(i, self.width),
            pixel_center(j, self.height),
            pixel_center(d, self.depth),
        )
    }

    /// Voxel pitch along `x`, `y`, `z`.
    pub fn pitch(&self) -> Vec3 {
        Vec3::new(
            2.0 / self.width as f64,
            2.0 / self.height as f64,
            2.0 / self.depth as f64,
        )
    }

    pub fn stencil(&self, p: &Vec3) -> Stencil {
        let (i0, i1, tx) = axis(p.x, self.width);
        let (j0, j1, ty) = axis(p.y, self.height);
        let (d0, d1, tz) = axis(p.z, self.depth);
        let mut s = Stencil {
            index: [0; 8],
            weight: [0.0; 8],
        };
        let mut k = 0;
        for (d, wz) in [(d0, 1.0 - tz), (d1, tz)] {
            for (j, wy) in [(j0, 1.0 - ty), (j1, ty)] {
                for (i, wx) in [(i0, 1.0 - tx), (i1, tx)] {
                    s.index[k] = self.index(d, j, i);
                    s.weight[k] = wz * wy * wx;
                    k += 1;
                }
            }
        }
        s
    }

    pub fn query(&self, p: &Vec3) -> f64 {
        let s = self.stencil(p);
        // offsets from the first corner, so a constant volume reads back exactly
        let v0 = sigmoid(self.theta[s.index[0]]);
        v0 + (1..8).map(|k| s.weight[k] * (sigmoid(self.theta[s.index[k]]) - v0)).sum::<f64>()
    }

    /// Adds `scale * d query / d theta` into `grad`.
    pub fn accumulate_grad(&self, p: &Vec3, scale: f64, grad: &mut [f64]) {
        let s = self.stencil(p);
        for k in 0..8 {
            let g = sigmoid(self.theta[s.index[k]]);
            grad[s.index[k]] += scale * s.weight[k] * g * (1.0 - g);
        }
    }

    /// Occupancy volume `sigmoid(theta)` in storage order.
    pub fn occupancy_volume(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| sigmoid(t)).collect()
    }

    /// Central-difference spatial gradient of the occupancy, one voxel pitch
    /// per axis.
    pub fn field_gradient(&self, p: &Vec3) -> Vec3 {
        let h = self.pitch();
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h[a];
            g[a] = (self.query(&(p + e)) - self.query(&(p - e))) / (2.0 * h[a]);
        }
        g
    }
}

/// Gradient norms below this are clamped before normalizing.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

/// Alignment of the negated, normalized field gradient with the sample
/// normals: mean of `|-g / max(|g|, 1e-6) - n|²`. Gradients scaled by
/// `scale` are added into `grad`.
pub fn nsp_loss_trigrid(grid: &TriGrid, samples: &[SamplePoint], scale: f64, grad: Option<&mut [f64]>) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let h = grid.pitch();
    let mut loss = 0.0;
    let mut grad = grad;
    for s in samples {
        let p = s.position;
        let target = s.normal;
        let g = grid.field_gradient(&p);
        let norm = g.norm();
        let m = norm.max(GRAD_NORM_FLOOR);
        let u = -g / m;
        let r = u - target;
        loss += r.norm_squared();
        let Some(grad) = grad.as_deref_mut() else {
            continue;
        };
        let du = 2.0 * r;
        // d u / d g = -(I - g gᵀ / |g|²) / |g| when |g| exceeds the floor
        let dg = if norm > GRAD_NORM_FLOOR {
            let gh = g / norm;
            -(du - gh * gh.dot(&du)) / norm
        } else {
            -du / GRAD_NORM_FLOOR
        };
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h[a];
            let c = scale * dg[a] / (2.0 * h[a]) / n;
            grid.accumulate_grad(&(p + e), c, grad);
            grid.accumulate_grad(&(p - e), -c, grad);
        }
    }
    loss / n
}
