//! Sampling training schemes: spatial, depth-oriented (DOS) and
//! fine-structure-aware (FSS).

pub mod format;
mod fss;
pub mod regions;
mod spatial;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{self, LabelConfig};
use crate::mesh::Bvh;
use crate::Vec3;

pub use fss::{allocate_budget, fss_scheme, gen_anchors, gen_counters, gen_twinned, Allocation, AnchorFamily, BudgetCounts, TwinPair};
pub use spatial::{dos_scheme, spatial_scheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    TwinA,
    TwinB,
    Anchor,
    ChildAnchor,
    CounterPrimary,
    CounterSecondary,
    UniformBox,
    Displaced,
}

impl SampleKind {
    pub const ALL: [SampleKind; 8] = [
        SampleKind::TwinA,
        SampleKind::TwinB,
        SampleKind::Anchor,
        SampleKind::ChildAnchor,
        SampleKind::CounterPrimary,
        SampleKind::CounterSecondary,
        SampleKind::UniformBox,
        SampleKind::Displaced,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    /// Partner kind for the involutive twin kinds.
    pub fn partner(self) -> Option<SampleKind> {
        match self {
            SampleKind::TwinA => Some(SampleKind::TwinB),
            SampleKind::TwinB => Some(SampleKind::TwinA),
            SampleKind::CounterPrimary => Some(SampleKind::CounterSecondary),
            SampleKind::CounterSecondary => Some(SampleKind::CounterPrimary),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub position: Vec3,
    pub label: f64,
    /// Groundtruth normal for normal supervision.
    pub normal: Vec3,
    pub kind: SampleKind,
    /// Twin partner; for child anchors the previous member of the family.
    pub twin: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Spatial,
    Dos,
    Fss,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Scheme::Spatial),
            "dos" => Ok(Scheme::Dos),
            "fss" => Ok(Scheme::Fss),
            other => Err(Error::config("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Spatial => "spatial",
            Scheme::Dos => "dos",
            Scheme::Fss => "fss",
        })
    }
}

/// Switches for the five FSS features, used by the ablation runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FssFeatures {
    pub twins: bool,
    pub proximity: bool,
    pub anchors: bool,
    pub counters: bool,
    pub region_guidance: bool,
}

impl Default for FssFeatures {
    fn default() -> Self {
        FssFeatures {
            twins: true,
            proximity: true,
            anchors: true,
            counters: true,
            region_guidance: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    /// Sample points per mesh per epoch.
    pub total_budget: usize,
    /// Std of the displacement noise.
    pub sigma: f64,
    /// Share of uniform-in-box points in the spatial scheme.
    pub uniform_ratio: f64,
    /// Twin displacement is clamped to `beta * thickness / 2`.
    pub beta: f64,
    /// Faces thinner than this are thin.
    pub tau_thin: f64,
    /// Child anchors per anchor.
    pub child_count: usize,
    pub counter_fraction: f64,
    /// Primary counter gap, as a multiple of `delta_z`.
    pub counter_gap_primary: f64,
    /// Secondary counter gap, as a multiple of `delta_z`.
    pub counter_gap_secondary: f64,
    /// Sampling weight multiplier of thin faces in automatic region mode.
    pub w_thin: f64,
    /// Share of the non-counter budget given to twinned pairs when thin
    /// faces exist; the rest goes to anchor families.
    pub twin_share: f64,
    pub features: FssFeatures,
    /// Filled from the top-level `labels` section of a run config.
    #[serde(skip)]
    pub labels: LabelConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            total_budget: 8000,
            sigma: 0.05,
            uniform_ratio: 1.0 / 16.0,
            beta: 0.8,
            tau_thin: 0.05,
            child_count: 3,
            counter_fraction: 0.15,
            counter_gap_primary: 0.1,
            counter_gap_secondary: 0.3,
            w_thin: 8.0,
            twin_share: 0.6,
            features: FssFeatures::default(),
            labels: LabelConfig::default(),
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(format!("{prefix}.{f}"), m));
        if self.total_budget == 0 || self.total_budget % 2 == 1 {
            return err("total_budget", format!("must be positive and even, got {}", self.total_budget));
        }
        for (name, v) in [
            ("uniform_ratio", self.uniform_ratio),
            ("counter_fraction", self.counter_fraction),
            ("twin_share", self.twin_share),
            ("beta", self.beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(name, format!("must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("tau_thin", self.tau_thin),
            ("counter_gap_primary", self.counter_gap_primary),
            ("counter_gap_secondary", self.counter_gap_secondary),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(name, format!("must be positive, got {v}"));
            }
        }
        if !(self.w_thin >= 1.0) {
            return err("w_thin", format!("must be at least 1, got {}", self.w_thin));
        }
        if self.counter_gap_secondary <= self.counter_gap_primary || self.counter_gap_primary >= 1.0 {
            return err(
                "counter_gap_secondary",
                "gaps must satisfy counter_gap_primary < counter_gap_secondary and counter_gap_primary < 1".into(),
            );
        }
        self.labels.validate(&format!("{prefix}.labels"))
    }
}

/// Count of points of each kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub twin_a: usize,
    pub twin_b: usize,
    pub anchor: usize,
    pub child_anchor: usize,
    pub counter_primary: usize,
    pub counter_secondary: usize,
    pub uniform_box: usize,
    pub displaced: usize,
}

impl KindCounts {
    pub fn tally(points: &[SamplePoint]) -> Self {
        let mut c = KindCounts::default();
        for p in points {
            *c.slot(p.kind) += 1;
        }
        c
    }

    fn slot(&mut self, k: SampleKind) -> &mut usize {
        match k {
            SampleKind::TwinA => &mut self.twin_a,
            SampleKind::TwinB => &mut self.twin_b,
            SampleKind::Anchor => &mut self.anchor,
            SampleKind::ChildAnchor => &mut self.child_anchor,
            SampleKind::CounterPrimary => &mut self.counter_primary,
            SampleKind::CounterSecondary => &mut self.counter_secondary,
            SampleKind::UniformBox => &mut self.uniform_box,
            SampleKind::Displaced => &mut self.displaced,
        }
    }

    pub fn total(&self) -> usize {
        self.twin_a
            + self.twin_b
            + self.anchor
            + self.child_anchor
            + self.counter_primary
            + self.counter_secondary
            + self.uniform_box
            + self.displaced
    }
}

/// Diagnostics gathered while generating a set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeStats {
    /// Base samples dropped because no wall thickness could be measured.
    pub skipped: usize,
    /// Points whose normal came from the closest-point fallback.
    pub normal_fallbacks: usize,
    /// Mesh face of every base surface sample, in generation order.
    pub base_faces: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
    pub mesh_id: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub config: SchemeConfig,
    pub counts: KindCounts,
    pub stats: SchemeStats,
}

impl SampleSet {
    /// Checks twin linkage, label range and normal length.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.points.len();
        for (i, p) in self.points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.label) {
                return Err(format!("point {i}: label {} out of range", p.label));
            }
            if (p.normal.norm() - 1.0).abs() > 1e-6 {
                return Err(format!("point {i}: normal not unit"));
            }
            match (p.kind.partner(), p.twin) {
                (Some(partner), Some(j)) => {
                    if j >= n || self.points[j].kind != partner || self.points[j].twin != Some(i) {
                        return Err(format!("point {i}: broken twin link to {j}"));
                    }
                }
                (Some(_), None) => return Err(format!("point {i}: twin kind without partner")),
                (None, Some(j)) if p.kind != SampleKind::ChildAnchor || j >= i => {
                    return Err(format!("point {i}: unexpected link to {j}"))
                }
                _ => {}
            }
        }
        if KindCounts::tally(&self.points) != self.counts {
            return Err("kind counts do not match the points".into());
        }
        Ok(())
    }
}

/// How a drafted point is labeled once its position is fixed.
#[derive(Clone, Copy, Debug)]
pub(crate) enum LabelRule {
    Binary,
    Camera,
    Omni,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Draft {
    pub position: Vec3,
    pub kind: SampleKind,
    pub twin: Option<usize>,
    pub rule: LabelRule,
}

/// Labels and normals for drafted points. Pure per point, so parallel
/// evaluation yields the same result as sequential.
pub(crate) fn finalize(bvh: &Bvh, drafts: Vec<Draft>, labels: &LabelConfig, stats: &mut SchemeStats) -> Vec<SamplePoint> {
    let eval = |d: &Draft| {
        let label = match d.rule {
            LabelRule::Binary => labeling::binary_label(bvh, &d.position),
            LabelRule::Camera => labeling::camera_label(bvh, &d.position, labels.delta_z),
            LabelRule::Omni => labeling::omni_label(bvh, &d.position, labels.delta_omni),
            LabelRule::Fixed(v) => v,
        };
        let n = labeling::sample_normal(bvh, &d.position);
        (
            SamplePoint {
                position: d.position,
                label,
                normal: n.normal,
                kind: d.kind,
                twin: d.twin,
            },
            n.fallback,
        )
    };
    #[cfg(feature = "parallel")]
    let out: Vec<(SamplePoint, bool)> = {
        use rayon::prelude::*;
        drafts.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<(SamplePoint, bool)> = drafts.iter().map(eval).collect();
    stats.normal_fallbacks += out.iter().filter(|(_, f)| *f).count();
    out.into_iter().map(|(p, _)| p).collect()
}

/// Generates a set with the requested scheme. `region_weights` only affects FSS.
pub fn generate(bvh: &Bvh, scheme: Scheme, cfg: &SchemeConfig, region_weights: Option<&[f64]>, seed: u64) -> Result<SampleSet> {
    cfg.validate("scheme")?;
    match scheme {
        Scheme::Spatial => spatial_scheme(bvh, cfg, seed),
        Scheme::Dos => dos_scheme(bvh, cfg, seed),
        Scheme::Fss => fss_scheme(bvh, cfg, region_weights, seed),
    }
}

/// Histogram of labels over `bins` equal bins of `[0, 1]`.
pub fn label_histogram(points: &[SamplePoint], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for p in points {
        let b = ((p.label * bins as f64) as usize).min(bins - 1);
        h[b] += 1;
    }
    h
}

/// Per-area density of base samples on marked faces divided by that on the
/// remaining faces. `None` when either group is empty.
pub fn region_density_ratio(bvh: &Bvh, base_faces: &[u32], marked: &[bool]) -> Option<f64> {
    let mesh = bvh.mesh();
    let (mut area_in, mut area_out, mut n_in, mut n_out) = (0.0, 0.0, 0usize, 0usize);
    for (f, &m) in marked.iter().enumerate() {
        if m {
            area_in += mesh.face_area(f);
        } else {
            area_out += mesh.face_area(f);
        }
    }
    for &f in base_faces {
        if marked[f as usize] {
            n_in += 1;
        } else {
            n_out += 1;
        }
    }
    if area_in == 0.0 || area_out == 0.0 || n_out == 0 {
        return None;
    }
    Some((n_in as f64 / area_in) / (n_out as f64 / area_out))
}
