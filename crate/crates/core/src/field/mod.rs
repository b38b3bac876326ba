//! Trainable occupancy fields: a sigmoid logit grid queried trilinearly,
//! a pixel-aligned feature grid with a small MLP, and their average.

mod checkpoint;
mod pixel;
mod trigrid;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::SamplePoint;
use crate::thickness::{mtl_loss, voxel_thickness_plane, ThicknessPlane};
use crate::Vec3;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use pixel::{Forward, Layout, NormalForward, PixelAlignedField};
pub use trigrid::{nsp_loss_trigrid, Stencil, TriGrid, GRAD_NORM_FLOOR};

pub fn sigmoid(x: f64) -> f64 {
    trigrid::sigmoid(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Trigrid,
    PixelAligned,
    Hybrid,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::Trigrid => 0,
            Variant::PixelAligned => 1,
            Variant::Hybrid => 2,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        [Variant::Trigrid, Variant::PixelAligned, Variant::Hybrid].get(t as usize).copied()
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Trigrid => "trigrid",
            Variant::PixelAligned => "pixel_aligned",
            Variant::Hybrid => "hybrid",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lambda_nsp: f64,
    pub lambda_mtl: f64,
    pub seed: u64,
    /// Trigrid dimensions `[D, H, W]`.
    pub grid: [usize; 3],
    /// Initial trigrid logit; negative so unsupervised voxels read as outside.
    pub init_logit: f64,
    pub feature_channels: usize,
    /// Feature grid is `feature_resolution²`.
    pub feature_resolution: usize,
    pub hidden: usize,
    /// Distinct sample sets drawn for training; epoch `e` uses set
    /// `e % epoch_sets`.
    pub epoch_sets: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Trigrid,
            learning_rate: 1e-2,
            steps: 2000,
            batch_size: 2048,
            lambda_nsp: 0.1,
            lambda_mtl: 0.1,
            seed: 0,
            grid: [64, 64, 64],
            init_logit: -2.0,
            feature_channels: 8,
            feature_resolution: 64,
            hidden: 16,
            epoch_sets: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(format!("{prefix}.{f}"), m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if self.epoch_sets == 0 {
            return err("epoch_sets", "must be positive".into());
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive".into());
        }
        for (n, v) in [("lambda_nsp", self.lambda_nsp), ("lambda_mtl", self.lambda_mtl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(n, format!("must be non-negative, got {v}"));
            }
        }
        if self.grid.iter().any(|&n| n < 2) {
            return err("grid", format!("every dimension must be at least 2, got {:?}", self.grid));
        }
        if !self.init_logit.is_finite() {
            return err("init_logit", "must be finite".into());
        }
        if self.feature_channels == 0 || self.feature_resolution < 2 || self.hidden == 0 {
            return err("feature_channels", "feature grid and hidden sizes must be positive".into());
        }
        Ok(())
    }
}

/// A trainable model; which parts are present depends on the variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub trigrid: Option<TriGrid>,
    pub pixel: Option<PixelAlignedField>,
}

/// Gradients shaped like the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub trigrid: Vec<f64>,
    pub pixel: Vec<f64>,
}

impl Grads {
    pub fn norm(&self) -> f64 {
        self.trigrid.iter().chain(&self.pixel).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &Grads, s: f64) {
        for (a, b) in self.trigrid.iter_mut().zip(&other.trigrid) {
            *a += s * b;
        }
        for (a, b) in self.pixel.iter_mut().zip(&other.pixel) {
            *a += s * b;
        }
    }
}

impl Model {
    pub fn new(cfg: &TrainConfig) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let [d, h, w] = cfg.grid;
        let trigrid = matches!(cfg.variant, Variant::Trigrid | Variant::Hybrid).then(|| TriGrid::new(d, h, w, cfg.init_logit));
        let pixel = matches!(cfg.variant, Variant::PixelAligned | Variant::Hybrid).then(|| {
            let r = cfg.feature_resolution;
            PixelAlignedField::init(cfg.feature_channels, r, r, cfg.hidden, &mut rng)
        });
        Model { trigrid, pixel }
    }

    pub fn variant(&self) -> Variant {
        match (&self.trigrid, &self.pixel) {
            (Some(_), None) => Variant::Trigrid,
            (None, Some(_)) => Variant::PixelAligned,
            _ => Variant::Hybrid,
        }
    }

    pub fn occupancy(&self, p: &Vec3) -> f64 {
        match (&self.trigrid, &self.pixel) {
            (Some(t), None) => t.query(p),
            (None, Some(f)) => f.query(p),
            (Some(t), Some(f)) => 0.5 * (t.query(p) + f.query(p)),
            (None, None) => unreachable!("model without parameters"),
        }
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            trigrid: vec![0.0; self.trigrid.as_ref().map_or(0, |t| t.theta.len())],
            pixel: vec![0.0; self.pixel.as_ref().map_or(0, |f| f.params.len())],
        }
    }

    /// Thickness plane of the trigrid's occupancy volume.
    pub fn thickness_plane(&self) -> Option<ThicknessPlane> {
        let t = self.trigrid.as_ref()?;
        Some(voxel_thickness_plane(&t.occupancy_volume(), t.dims(), 2.0 / t.depth as f64).expect("sigmoid output is in [0, 1]"))
    }

    pub fn params_finite(&self) -> bool {
        self.trigrid.iter().flat_map(|t| &t.theta).all(|v| v.is_finite())
            && self.pixel.iter().flat_map(|f| &f.params).all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub occ: f64,
    pub nsp: f64,
    pub mtl: f64,
    pub total: f64,
}

/// Each loss term with its own gradient.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub occ: (f64, Grads),
    pub nsp: (f64, Grads),
    pub mtl: (f64, Grads),
}

pub fn occupancy_loss(model: &Model, batch: &[SamplePoint]) -> (f64, Grads) {
    let mut g = model.zero_grads();
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    for s in batch {
        let p = &s.position;
        let (o, fwd) = match (&model.trigrid, &model.pixel) {
            (Some(t), None) => (t.query(p), None),
            (None, Some(f)) => {
                let fw = f.forward(p);
                (fw.occupancy, Some(fw))
            }
            (Some(t), Some(f)) => {
                let fw = f.forward(p);
                (0.5 * (t.query(p) + fw.occupancy), Some(fw))
            }
            (None, None) => unreachable!(),
        };
        let r = o - s.label;
        loss += r * r;
        let d = 2.0 * r / n;
        let share = if model.variant() == Variant::Hybrid { 0.5 } else { 1.0 };
        if let Some(t) = &model.trigrid {
            t.accumulate_grad(p, share * d, &mut g.trigrid);
        }
        if let (Some(f), Some(fw)) = (&model.pixel, fwd) {
            f.backward(&fw, share * d, &mut g.pixel);
        }
    }
    (loss / n, g)
}

/// Normal-head loss: mean of `|head(p) - n|²`; gradient scaled by `scale`.
pub fn nsp_loss_pixel(field: &PixelAlignedField, batch: &[SamplePoint], scale: f64, grad: Option<&mut [f64]>) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = grad;
    for s in batch {
        let fw = field.normal_forward(&s.position);
        let r = fw.normal - s.normal;
        loss += r.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            field.normal_backward(&fw, &(r * (2.0 * scale / n)), g);
        }
    }
    loss / n
}

pub fn nsp_loss(model: &Model, batch: &[SamplePoint]) -> (f64, Grads) {
    let mut g = model.zero_grads();
    let loss = match (&model.trigrid, &model.pixel) {
        (Some(t), None) => nsp_loss_trigrid(t, batch, 1.0, Some(&mut g.trigrid)),
        (None, Some(f)) => nsp_loss_pixel(f, batch, 1.0, Some(&mut g.pixel)),
        (Some(t), Some(f)) => {
            0.5 * nsp_loss_trigrid(t, batch, 0.5, Some(&mut g.trigrid)) + 0.5 * nsp_loss_pixel(f, batch, 0.5, Some(&mut g.pixel))
        }
        (None, None) => unreachable!(),
    };
    (loss, g)
}

/// Thickness loss on the trigrid part; zero for models without one.
pub fn thickness_loss(model: &Model, gt: &ThicknessPlane) -> Result<(f64, Grads)> {
    let mut g = model.zero_grads();
    let Some(t) = &model.trigrid else {
        return Ok((0.0, g));
    };
    let vol = t.occupancy_volume();
    let dz = 2.0 / t.depth as f64;
    let pred = voxel_thickness_plane(&vol, t.dims(), dz)?;
    let (loss, dplane) = mtl_loss(&pred, gt)?;
    let hw = t.height * t.width;
    for (k, s) in vol.iter().enumerate() {
        g.trigrid[k] = dplane[k % hw] * dz * s * (1.0 - s);
    }
    Ok((loss, g))
}

pub fn loss_terms(model: &Model, batch: &[SamplePoint], gt_plane: Option<&ThicknessPlane>, cfg: &TrainConfig) -> Result<LossTerms> {
    let occ = occupancy_loss(model, batch);
    let nsp = if cfg.lambda_nsp > 0.0 {
        nsp_loss(model, batch)
    } else {
        (0.0, model.zero_grads())
    };
    let mtl = match gt_plane {
        Some(gt) => thickness_loss(model, gt)?,
        None if cfg.lambda_mtl > 0.0 && model.trigrid.is_some() => return Err(Error::MissingThicknessPlane),
        None => (0.0, model.zero_grads()),
    };
    Ok(LossTerms { occ, nsp, mtl })
}

/// Weighted total `occ + λ_nsp·nsp + λ_mtl·mtl` and its gradient.
pub fn compute_losses(model: &Model, batch: &[SamplePoint], gt_plane: Option<&ThicknessPlane>, cfg: &TrainConfig) -> Result<(LossReport, Grads)> {
    let t = loss_terms(model, batch, gt_plane, cfg)?;
    let mut g = t.occ.1;
    g.add_scaled(&t.nsp.1, cfg.lambda_nsp);
    g.add_scaled(&t.mtl.1, cfg.lambda_mtl);
    let report = LossReport {
        step: 0,
        occ: t.occ.0,
        nsp: t.nsp.0,
        mtl: t.mtl.0,
        total: t.occ.0 + cfg.lambda_nsp * t.nsp.0 + cfg.lambda_mtl * t.mtl.0,
    };
    Ok((report, g))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam over one flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * g;
            self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * g * g;
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Runs `cfg.steps` Adam steps on seeded shuffled minibatches of one
/// sample set, reshuffled every epoch.
pub fn train(model: &mut Model, samples: &[SamplePoint], gt_plane: Option<&ThicknessPlane>, cfg: &TrainConfig) -> Result<Vec<LossReport>> {
    train_sets(model, &[samples], gt_plane, cfg)
}

/// Like [`train`], but epoch `e` draws from `sets[e % sets.len()]`. Single
/// threaded, so the result is bit-identical for a given seed.
pub fn train_sets<S: AsRef<[SamplePoint]>>(model: &mut Model, sets: &[S], gt_plane: Option<&ThicknessPlane>, cfg: &TrainConfig) -> Result<Vec<LossReport>> {
    cfg.validate("train")?;
    if sets.is_empty() || sets.iter().any(|s| s.as_ref().is_empty()) {
        return Err(Error::EmptyInput("sample set"));
    }
    if cfg.lambda_mtl > 0.0 && model.trigrid.is_some() && gt_plane.is_none() {
        return Err(Error::MissingThicknessPlane);
    }
    // sampling order gets its own stream so it does not depend on model init
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_ba7c4);
    let mut epoch = 0;
    let mut samples = sets[0].as_ref();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch_len = cfg.batch_size.min(sets.iter().map(|s| s.as_ref().len()).min().unwrap_or(0));
    let mut opt_t = model.trigrid.as_ref().map(|t| Adam::new(cfg.learning_rate, t.theta.len()));
    let mut opt_p = model.pixel.as_ref().map(|f| Adam::new(cfg.learning_rate, f.params.len()));
    let mut history = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(batch_len);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < batch_len {
            if cursor == order.len() {
                epoch += 1;
                samples = sets[epoch % sets.len()].as_ref();
                order.clear();
                order.extend(0..samples.len());
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(samples[order[cursor]]);
            cursor += 1;
        }
        let terms = loss_terms(model, &batch, gt_plane, cfg)?;
        let report = LossReport {
            step,
            occ: terms.occ.0,
            nsp: terms.nsp.0,
            mtl: terms.mtl.0,
            total: terms.occ.0 + cfg.lambda_nsp * terms.nsp.0 + cfg.lambda_mtl * terms.mtl.0,
        };
        let mut g = terms.occ.1;
        // the normalized-gradient alignment term has ~1/|∇f| gradients where
        // the field is still flat; cap it at the occupancy gradient's norm
        let cap = g.norm();
        let nsp_norm = cfg.lambda_nsp * terms.nsp.1.norm();
        let nsp_scale = if nsp_norm > cap { cap / nsp_norm } else { 1.0 };
        g.add_scaled(&terms.nsp.1, cfg.lambda_nsp * nsp_scale);
        g.add_scaled(&terms.mtl.1, cfg.lambda_mtl);
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if let (Some(t), Some(o)) = (model.trigrid.as_mut(), opt_t.as_mut()) {
            o.step(&mut t.theta, &g.trigrid);
        }
        if let (Some(f), Some(o)) = (model.pixel.as_mut(), opt_p.as_mut()) {
            o.step(&mut f.params, &g.pixel);
        }
        if !model.params_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        history.push(report);
    }
    Ok(history)
}

pub fn history_csv(history: &[LossReport]) -> String {
    let mut s = String::from("step,occ,nsp,mtl,total\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.occ, r.nsp, r.mtl, r.total);
    }
    s
}

pub fn write_history_csv(history: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
