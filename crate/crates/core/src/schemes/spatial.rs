use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{finalize, Draft, KindCounts, LabelRule, SampleKind, SampleSet, Scheme, SchemeConfig, SchemeStats};
use crate::error::Result;
use crate::mesh::{sample_surface, Bvh};
use crate::Vec3;

/// Surface points displaced by isotropic Gaussian noise plus uniform points
/// in the box, all with binary labels.
pub fn spatial_scheme(bvh: &Bvh, cfg: &SchemeConfig, seed: u64) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_uniform = (cfg.uniform_ratio * cfg.total_budget as f64).round() as usize;
    let n_displaced = cfg.total_budget - n_uniform;
    let base = sample_surface(bvh.mesh(), n_displaced, None, &mut rng)?;
    let mut stats = SchemeStats {
        base_faces: base.iter().map(|s| s.face as u32).collect(),
        ..Default::default()
    };
    let mut drafts = Vec::with_capacity(cfg.total_budget);
    for s in &base {
        let noise = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * cfg.sigma;
        drafts.push(Draft {
            position: s.position + noise,
            kind: SampleKind::Displaced,
            twin: None,
            rule: LabelRule::Binary,
        });
    }
    for _ in 0..n_uniform {
        let p = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        drafts.push(Draft {
            position: p,
            kind: SampleKind::UniformBox,
            twin: None,
            rule: LabelRule::Binary,
        });
    }
    let points = finalize(bvh, drafts, &cfg.labels, &mut stats);
    Ok(SampleSet {
        counts: KindCounts::tally(&points),
        points,
        mesh_id: String::new(),
        scheme: Scheme::Spatial,
        seed,
        config: *cfg,
        stats,
    })
}

/// Surface points displaced along the camera axis only, with
/// camera-direction labels.
pub fn dos_scheme(bvh: &Bvh, cfg: &SchemeConfig, seed: u64) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = sample_surface(bvh.mesh(), cfg.total_budget, None, &mut rng)?;
    let mut stats = SchemeStats {
        base_faces: base.iter().map(|s| s.face as u32).collect(),
        ..Default::default()
    };
    let drafts = base
        .iter()
        .map(|s| {
            let dz: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.sigma;
            Draft {
                position: s.position + Vec3::new(0.0, 0.0, dz),
                kind: SampleKind::Displaced,
                twin: None,
                rule: LabelRule::Camera,
            }
        })
        .collect();
    let points = finalize(bvh, drafts, &cfg.labels, &mut stats);
    Ok(SampleSet {
        counts: KindCounts::tally(&points),
        points,
        mesh_id: String::new(),
        scheme: Scheme::Dos,
        seed,
        config: *cfg,
        stats,
    })
}
