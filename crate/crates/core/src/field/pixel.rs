use rand::Rng;

use super::trigrid::sigmoid;
use crate::Vec3;

/// Pixel-aligned occupancy: a learnable `C×H×W` feature grid sampled
/// bilinearly at `(x, y)`, concatenated with `z`, and fed to a small MLP
/// (`C+1 → hidden → hidden → 1`, tanh hidden, sigmoid output). A second
/// head (`C+1 → hidden → 3`) predicts normals at train time only.
///
/// All parameters live in one flat vector; [`Layout`] gives the slices.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelAlignedField {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub features: (usize, usize),
    pub w1: (usize, usize),
    pub b1: (usize, usize),
    pub w2: (usize, usize),
    pub b2: (usize, usize),
    pub w3: (usize, usize),
    pub b3: (usize, usize),
    pub n1: (usize, usize),
    pub nb1: (usize, usize),
    pub n2: (usize, usize),
    pub nb2: (usize, usize),
}

impl Layout {
    fn new(c: usize, h: usize, w: usize, hid: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = (at, at + n);
            at += n;
            r
        };
        let i = c + 1;
        Layout {
            features: take(c * h * w),
            w1: take(hid * i),
            b1: take(hid),
            w2: take(hid * hid),
            b2: take(hid),
            w3: take(hid),
            b3: take(1),
            n1: take(hid * i),
            nb1: take(hid),
            n2: take(3 * hid),
            nb2: take(3),
        }
    }

    pub fn len(&self) -> usize {
        self.nb2.1
    }
}

fn sl(p: &[f64], r: (usize, usize)) -> &[f64] {
    &p[r.0..r.1]
}

fn sl_mut(p: &mut [f64], r: (usize, usize)) -> &mut [f64] {
    &mut p[r.0..r.1]
}

/// `y = W x + b` with `W` row-major `out × in`.
fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and returns `Wᵀ dy`.
fn dense_back(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; n];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &w[o * n..(o + 1) * n];
        let drow = &mut dw[o * n..(o + 1) * n];
        for k in 0..n {
            drow[k] += g * x[k];
            dx[k] += g * row[k];
        }
    }
    dx
}

fn bilinear_axis(c: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let u = ((c + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, i + 1, u - i as f64)
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    taps: [(usize, f64); 4],
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub occupancy: f64,
}

#[derive(Clone, Debug)]
pub struct NormalForward {
    taps: [(usize, f64); 4],
    input: Vec<f64>,
    h: Vec<f64>,
    pub normal: Vec3,
}

impl PixelAlignedField {
    pub fn zeros(channels: usize, height: usize, width: usize, hidden: usize) -> Self {
        let len = Layout::new(channels, height, width, hidden).len();
        PixelAlignedField {
            channels,
            height,
            width,
            hidden,
            params: vec![0.0; len],
        }
    }

    /// Small random features and Glorot-uniform weights; biases zero.
    pub fn init<R: Rng + ?Sized>(channels: usize, height: usize, width: usize, hidden: usize, rng: &mut R) -> Self {
        let mut f = Self::zeros(channels, height, width, hidden);
        let l = f.layout();
        let i = channels + 1;
        for v in sl_mut(&mut f.params, l.features) {
            *v = rng.random_range(-0.1..0.1);
        }
        for (r, fan_in, fan_out) in [
            (l.w1, i, hidden),
            (l.w2, hidden, hidden),
            (l.w3, hidden, 1),
            (l.n1, i, hidden),
            (l.n2, hidden, 3),
        ] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in sl_mut(&mut f.params, r) {
                *v = rng.random_range(-a..a);
            }
        }
        f
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.channels, self.height, self.width, self.hidden)
    }

    fn taps(&self, p: &Vec3) -> [(usize, f64); 4] {
        let (i0, i1, tx) = bilinear_axis(p.x, self.width);
        let (j0, j1, ty) = bilinear_axis(p.y, self.height);
        [
            (j0 * self.width + i0, (1.0 - ty) * (1.0 - tx)),
            (j0 * self.width + i1, (1.0 - ty) * tx),
            (j1 * self.width + i0, ty * (1.0 - tx)),
            (j1 * self.width + i1, ty * tx),
        ]
    }

    /// Bilinearly sampled feature vector followed by `z`.
    fn input(&self, p: &Vec3, taps: &[(usize, f64); 4]) -> Vec<f64> {
        let feats = sl(&self.params, self.layout().features);
        let hw = self.height * self.width;
        let mut x: Vec<f64> = (0..self.channels)
            .map(|c| taps.iter().map(|&(k, w)| w * feats[c * hw + k]).sum())
            .collect();
        x.push(p.z);
        x
    }

    pub fn forward(&self, p: &Vec3) -> Forward {
        let l = self.layout();
        let taps = self.taps(p);
        let input = self.input(p, &taps);
        let pr = &self.params;
        let h1: Vec<f64> = dense(sl(pr, l.w1), sl(pr, l.b1), &input).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = dense(sl(pr, l.w2), sl(pr, l.b2), &h1).into_iter().map(f64::tanh).collect();
        let a3 = dense(sl(pr, l.w3), sl(pr, l.b3), &h2)[0];
        Forward {
            taps,
            input,
            h1,
            h2,
            occupancy: sigmoid(a3),
        }
    }

    pub fn query(&self, p: &Vec3) -> f64 {
        self.forward(p).occupancy
    }

    /// Adds `d_out * d occupancy / d params` into `grad`.
    pub fn backward(&self, f: &Forward, d_out: f64, grad: &mut [f64]) {
        let l = self.layout();
        let pr = &self.params;
        let da3 = [d_out * f.occupancy * (1.0 - f.occupancy)];
        let dh2 = {
            let (w3, b3) = split_pair(grad, l.w3, l.b3);
            dense_back(sl(pr, l.w3), &f.h2, &da3, w3, b3)
        };
        let da2: Vec<f64> = dh2.iter().zip(&f.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        let dh1 = {
            let (w2, b2) = split_pair(grad, l.w2, l.b2);
            dense_back(sl(pr, l.w2), &f.h1, &da2, w2, b2)
        };
        let da1: Vec<f64> = dh1.iter().zip(&f.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        let dx = {
            let (w1, b1) = split_pair(grad, l.w1, l.b1);
            dense_back(sl(pr, l.w1), &f.input, &da1, w1, b1)
        };
        self.scatter_features(&f.taps, &dx, grad);
    }

    fn scatter_features(&self, taps: &[(usize, f64); 4], dx: &[f64], grad: &mut [f64]) {
        let hw = self.height * self.width;
        let g = sl_mut(grad, self.layout().features);
        for c in 0..self.channels {
            for &(k, w) in taps {
                g[c * hw + k] += w * dx[c];
            }
        }
    }

    pub fn normal_forward(&self, p: &Vec3) -> NormalForward {
        let l = self.layout();
        let taps = self.taps(p);
        let input = self.input(p, &taps);
        let pr = &self.params;
        let h: Vec<f64> = dense(sl(pr, l.n1), sl(pr, l.nb1), &input).into_iter().map(f64::tanh).collect();
        let o = dense(sl(pr, l.n2), sl(pr, l.nb2), &h);
        NormalForward {
            taps,
            input,
            h,
            normal: Vec3::new(o[0], o[1], o[2]),
        }
    }

    /// Raw normal-head output, not normalized.
    pub fn normal_query(&self, p: &Vec3) -> Vec3 {
        self.normal_forward(p).normal
    }

    /// Adds `d_out · d normal / d params` into `grad`.
    pub fn normal_backward(&self, f: &NormalForward, d_out: &Vec3, grad: &mut [f64]) {
        let l = self.layout();
        let pr = &self.params;
        let dh = {
            let (n2, nb2) = split_pair(grad, l.n2, l.nb2);
            dense_back(sl(pr, l.n2), &f.h, d_out.as_slice(), n2, nb2)
        };
        let da: Vec<f64> = dh.iter().zip(&f.h).map(|(g, h)| g * (1.0 - h * h)).collect();
        let dx = {
            let (n1, nb1) = split_pair(grad, l.n1, l.nb1);
            dense_back(sl(pr, l.n1), &f.input, &da, n1, nb1)
        };
        self.scatter_features(&f.taps, &dx, grad);
    }
}

/// Two disjoint mutable slices of `v`; `a` must precede `b`.
fn split_pair(v: &mut [f64], a: (usize, usize), b: (usize, usize)) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.1 <= b.0);
    let (lo, hi) = v.split_at_mut(b.0);
    (&mut lo[a.0..a.1], &mut hi[..b.1 - b.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::pixel_center;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_field_is_half() {
        let f = PixelAlignedField::zeros(8, 4, 4, 16);
        assert_eq!(f.query(&Vec3::new(0.3, -0.2, 0.9)), 0.5);
        assert_eq!(f.normal_query(&Vec3::new(0.3, -0.2, 0.9)), Vec3::zeros());
    }

    #[test]
    fn constant_features_depend_only_on_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = PixelAlignedField::init(4, 6, 6, 8, &mut rng);
        let l = f.layout();
        let hw = 36;
        for c in 0..4 {
            for k in 0..hw {
                f.params[l.features.0 + c * hw + k] = 0.1 * c as f64 - 0.2;
            }
        }
        for _ in 0..20 {
            let z = rng.random_range(-1.0..1.0);
            let a = f.query(&Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z));
            let b = f.query(&Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z));
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn occupancy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = PixelAlignedField::init(3, 4, 4, 5, &mut rng);
        let h = 1e-4;
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let p = rand_point(&mut rng);
            let mut grad = vec![0.0; f.params.len()];
            f.backward(&f.forward(&p), 1.0, &mut grad);
            for k in 0..f.params.len() {
                let mut a = f.clone();
                let mut b = f.clone();
                a.params[k] += h;
                b.params[k] -= h;
                let fd = (a.query(&p) - b.query(&p)) / (2.0 * h);
                worst = worst.max(rel_err(fd, grad[k]));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn normal_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = PixelAlignedField::init(3, 4, 4, 5, &mut rng);
        let h = 1e-4;
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let p = rand_point(&mut rng);
            let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut grad = vec![0.0; f.params.len()];
            f.normal_backward(&f.normal_forward(&p), &w, &mut grad);
            for k in 0..f.params.len() {
                let mut a = f.clone();
                let mut b = f.clone();
                a.params[k] += h;
                b.params[k] -= h;
                let fd = (a.normal_query(&p).dot(&w) - b.normal_query(&p).dot(&w)) / (2.0 * h);
                worst = worst.max(rel_err(fd, grad[k]));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn bilinear_hits_pixel_centers() {
        let mut f = PixelAlignedField::zeros(1, 3, 3, 2);
        let l = f.layout();
        for k in 0..9 {
            f.params[l.features.0 + k] = k as f64;
        }
        let taps = f.taps(&Vec3::new(pixel_center(2, 3), pixel_center(1, 3), 0.0));
        let x = f.input(&Vec3::zeros(), &taps);
        assert!((x[0] - 5.0).abs() < 1e-12);
    }
}
