use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{finalize, Draft, KindCounts, LabelRule, SampleKind, SampleSet, Scheme, SchemeConfig, SchemeStats};
use crate::error::{Error, Result};
use crate::mesh::{sample_surface, Bvh, SurfaceSample};
use crate::Vec3;

/// Give up on filling a quota after this many draws per requested item.
const MAX_DRAWS_PER_ITEM: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwinPair {
    /// Outside twin, `q + eps * n`.
    pub outer: Vec3,
    /// Inside twin, `q - eps * n`.
    pub inner: Vec3,
    pub surface: SurfaceSample,
    pub eps: f64,
    pub thickness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorFamily {
    /// Medial point `q - (t/2) n`.
    pub anchor: Vec3,
    /// Points strictly between the anchor and `q`, ordered from the anchor outward.
    pub children: Vec<Vec3>,
    pub surface: SurfaceSample,
    pub thickness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CounterPair {
    pub primary: Vec3,
    pub secondary: Vec3,
    /// Whether the camera ray through `(x, y)` hit the mesh.
    pub hit: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BudgetCounts {
    pub twin_pairs: usize,
    pub anchor_families: usize,
    pub counter_pairs: usize,
    /// Points in the twin slot when twins are disabled (emitted unpaired).
    pub unpaired: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub face_weights: Vec<f64>,
    pub thin_faces: Vec<bool>,
    pub counts: BudgetCounts,
}

/// Twinned points straddling the surface along its normal, with
/// displacement clamped to a fraction of the local wall thickness.
/// Returns the pairs and the number of skipped samples.
pub fn gen_twinned<R: Rng + ?Sized>(
    bvh: &Bvh,
    surface: &[SurfaceSample],
    cfg: &SchemeConfig,
    rng: &mut R,
) -> (Vec<TwinPair>, usize) {
    let mut pairs = Vec::with_capacity(surface.len());
    let mut skipped = 0;
    for q in surface {
        // draw before the thickness query so skips do not shift the stream
        let raw = rng.sample::<f64, _>(StandardNormal).abs() * cfg.sigma;
        let Some(t) = bvh.local_thickness(q) else {
            skipped += 1;
            continue;
        };
        let eps = if cfg.features.proximity {
            raw.min(cfg.beta * t / 2.0)
        } else {
            raw
        };
        pairs.push(TwinPair {
            outer: q.position + q.normal * eps,
            inner: q.position - q.normal * eps,
            surface: *q,
            eps,
            thickness: t,
        });
    }
    (pairs, skipped)
}

/// Anchor families on samples whose wall is thinner than `tau_thin`.
pub fn gen_anchors(bvh: &Bvh, thin_surface: &[SurfaceSample], cfg: &SchemeConfig) -> Vec<AnchorFamily> {
    thin_surface
        .iter()
        .filter_map(|q| {
            let t = bvh.local_thickness(q)?;
            if t >= cfg.tau_thin {
                return None;
            }
            let anchor = q.position - q.normal * (t / 2.0);
            let k = cfg.child_count;
            let children = (1..=k)
                .map(|i| anchor + (q.position - anchor) * (i as f64 / (k + 1) as f64))
                .collect();
            Some(AnchorFamily {
                anchor,
                children,
                surface: *q,
                thickness: t,
            })
        })
        .collect()
}

/// Outside points in front of or behind the mesh along random camera rays.
pub fn gen_counters<R: Rng + ?Sized>(bvh: &Bvh, cfg: &SchemeConfig, n_pairs: usize, rng: &mut R) -> Vec<CounterPair> {
    let dz = cfg.labels.delta_z;
    (0..n_pairs)
        .map(|_| {
            let x = rng.random_range(-1.0..1.0);
            let y = rng.random_range(-1.0..1.0);
            let front = rng.random_bool(0.5);
            let (origin_z, dir) = if front { (10.0, -1.0) } else { (-10.0, 1.0) };
            let hits = bvh.raycast(&Vec3::new(x, y, origin_z), &Vec3::new(0.0, 0.0, dir));
            match hits.first() {
                Some(h) => {
                    // step back toward the camera, away from the surface
                    let back = -dir;
                    let zs = h.point.z;
                    CounterPair {
                        primary: Vec3::new(x, y, zs + back * cfg.counter_gap_primary * dz),
                        secondary: Vec3::new(x, y, zs + back * cfg.counter_gap_secondary * dz),
                        hit: true,
                    }
                }
                None => CounterPair {
                    primary: Vec3::new(x, y, rng.random_range(-1.0..1.0)),
                    secondary: Vec3::new(x, y, rng.random_range(-1.0..1.0)),
                    hit: false,
                },
            }
        })
        .collect()
}

/// Per-face sampling weights and the split of the budget across features.
/// Explicit `region_weights` are used verbatim; otherwise faces thinner than
/// `tau_thin` get `w_thin`.
pub fn allocate_budget(bvh: &Bvh, region_weights: Option<&[f64]>, cfg: &SchemeConfig) -> Result<Allocation> {
    let nf = bvh.mesh().faces.len();
    let thin_faces: Vec<bool> = bvh
        .face_thickness()
        .into_iter()
        .map(|t| t.is_some_and(|t| t < cfg.tau_thin))
        .collect();
    let face_weights: Vec<f64> = match (cfg.features.region_guidance, region_weights) {
        (false, _) => vec![1.0; nf],
        (true, Some(w)) => {
            if w.len() != nf {
                return Err(Error::WeightCount {
                    got: w.len(),
                    expected: nf,
                });
            }
            w.to_vec()
        }
        (true, None) => thin_faces
            .iter()
            .map(|&t| if t { cfg.w_thin } else { 1.0 })
            .collect(),
    };
    if !face_weights.iter().any(|&w| w > 0.0) {
        return Err(Error::ZeroWeights);
    }

    let total = cfg.total_budget;
    let counter_pairs = if cfg.features.counters {
        (cfg.counter_fraction * total as f64 / 2.0).floor() as usize
    } else {
        0
    };
    let rest = total - 2 * counter_pairs;
    let family = cfg.child_count + 1;
    let mut anchor_families = if cfg.features.anchors && thin_faces.iter().any(|&t| t) {
        ((1.0 - cfg.twin_share) * rest as f64 / family as f64).floor() as usize
    } else {
        0
    };
    // twinned points come in pairs
    if (rest - anchor_families * family) % 2 == 1 {
        anchor_families -= 1;
    }
    let twin_points = rest - anchor_families * family;
    let counts = if cfg.features.twins {
        BudgetCounts {
            twin_pairs: twin_points / 2,
            anchor_families,
            counter_pairs,
            unpaired: 0,
        }
    } else {
        BudgetCounts {
            twin_pairs: 0,
            anchor_families,
            counter_pairs,
            unpaired: twin_points,
        }
    };
    Ok(Allocation {
        face_weights,
        thin_faces,
        counts,
    })
}

/// Draws surface samples until `want` items are produced by `make`.
fn fill<T, R: Rng + ?Sized>(
    bvh: &Bvh,
    weights: &[f64],
    want: usize,
    rng: &mut R,
    stats: &mut SchemeStats,
    mut make: impl FnMut(&[SurfaceSample], &mut R) -> Vec<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(want);
    let mut draws = 0;
    while out.len() < want && draws < MAX_DRAWS_PER_ITEM * want.max(1) {
        let need = want - out.len();
        let base = sample_surface(bvh.mesh(), need, Some(weights), rng)?;
        draws += need;
        let made = make(&base, rng);
        stats.skipped += need - made.len();
        stats.base_faces.extend(base.iter().map(|s| s.face as u32));
        out.extend(made);
    }
    Ok(out)
}

/// Fine-structure-aware sample set: twinned pairs, anchor families and
/// twinned counter points, totalling exactly `total_budget`.
pub fn fss_scheme(bvh: &Bvh, cfg: &SchemeConfig, region_weights: Option<&[f64]>, seed: u64) -> Result<SampleSet> {
    let alloc = allocate_budget(bvh, region_weights, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SchemeStats::default();
    let mut counts = alloc.counts;
    let family = cfg.child_count + 1;

    let thin_weights: Vec<f64> = alloc
        .face_weights
        .iter()
        .zip(&alloc.thin_faces)
        .map(|(&w, &t)| if t { w } else { 0.0 })
        .collect();
    let families = if counts.anchor_families > 0 && thin_weights.iter().any(|&w| w > 0.0) {
        fill(bvh, &thin_weights, counts.anchor_families, &mut rng, &mut stats, |b, _| gen_anchors(bvh, b, cfg))?
    } else {
        Vec::new()
    };
    // whatever the anchors could not fill goes to the twin slot
    let shortfall = (counts.anchor_families - families.len()) * family;
    counts.anchor_families = families.len();
    let twin_points = 2 * counts.twin_pairs + counts.unpaired + shortfall;
    let (n_pairs, n_single) = if cfg.features.twins {
        // an odd family size can leave one point that cannot be paired
        (twin_points / 2, twin_points % 2)
    } else {
        (0, twin_points)
    };

    let mut drafts: Vec<Draft> = Vec::with_capacity(cfg.total_budget);
    let push = |drafts: &mut Vec<Draft>, position, kind, twin, rule| {
        drafts.push(Draft {
            position,
            kind,
            twin,
            rule,
        });
        drafts.len() - 1
    };

    let pairs = fill(bvh, &alloc.face_weights, n_pairs, &mut rng, &mut stats, |b, r| {
        gen_twinned(bvh, b, cfg, r).0
    })?;
    for p in &pairs {
        let i = drafts.len();
        push(&mut drafts, p.outer, SampleKind::TwinA, Some(i + 1), LabelRule::Omni);
        push(&mut drafts, p.inner, SampleKind::TwinB, Some(i), LabelRule::Omni);
    }
    // unpaired points: one side of a displacement pair, chosen at random
    let singles = fill(bvh, &alloc.face_weights, n_single, &mut rng, &mut stats, |b, r| {
        let (pairs, _) = gen_twinned(bvh, b, cfg, r);
        pairs
            .into_iter()
            .map(|p| if r.random_bool(0.5) { p.outer } else { p.inner })
            .collect()
    })?;
    for p in &singles {
        push(&mut drafts, *p, SampleKind::Displaced, None, LabelRule::Omni);
    }
    if pairs.len() < n_pairs || singles.len() < n_single {
        return Err(Error::BudgetShortfall {
            wanted: 2 * n_pairs + n_single,
            got: 2 * pairs.len() + singles.len(),
        });
    }
    counts.twin_pairs = pairs.len();
    counts.unpaired = singles.len();

    for f in &families {
        let mut prev = push(&mut drafts, f.anchor, SampleKind::Anchor, None, LabelRule::Omni);
        for c in &f.children {
            prev = push(&mut drafts, *c, SampleKind::ChildAnchor, Some(prev), LabelRule::Omni);
        }
    }

    let counters = gen_counters(bvh, cfg, counts.counter_pairs, &mut rng);
    for c in &counters {
        let i = drafts.len();
        let (rule_p, rule_s) = if c.hit {
            (LabelRule::Camera, LabelRule::Camera)
        } else {
            (LabelRule::Fixed(0.0), LabelRule::Fixed(0.0))
        };
        push(&mut drafts, c.primary, SampleKind::CounterPrimary, Some(i + 1), rule_p);
        push(&mut drafts, c.secondary, SampleKind::CounterSecondary, Some(i), rule_s);
    }

    let points = finalize(bvh, drafts, &cfg.labels, &mut stats);
    Ok(SampleSet {
        counts: KindCounts::tally(&points),
        points,
        mesh_id: String::new(),
        scheme: Scheme::Fss,
        seed,
        config: *cfg,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::omni_label;
    use crate::mesh::fixtures;
    use crate::schemes::{region_density_ratio, regions::thin_face_weights, FssFeatures};

    fn fin() -> Bvh {
        Bvh::build(fixtures::thin_fin())
    }

    fn cfg() -> SchemeConfig {
        SchemeConfig::default()
    }

    #[test]
    fn budget_counts() {
        let bvh = fin();
        let set = fss_scheme(&bvh, &cfg(), None, 1).unwrap();
        assert_eq!(set.points.len(), 8000);
        assert_eq!(set.counts.counter_primary + set.counts.counter_secondary, 1200);
        assert!(set.counts.anchor > 0);
        assert_eq!(set.counts.child_anchor, 3 * set.counts.anchor);
        assert_eq!(set.counts.twin_a, set.counts.twin_b);
        set.validate().unwrap();

        for budget in [2, 10, 98, 1000, 4002] {
            for child_count in [0, 1, 2, 4] {
                let c = SchemeConfig {
                    total_budget: budget,
                    child_count,
                    ..cfg()
                };
                let set = fss_scheme(&bvh, &c, None, 3).unwrap();
                assert_eq!(set.counts.total(), budget, "budget {budget} k {child_count}");
                set.validate().unwrap();
            }
        }
    }

    #[test]
    fn sphere_has_no_anchors() {
        let bvh = Bvh::build(fixtures::icosphere(3, 1.0));
        let set = fss_scheme(&bvh, &cfg(), None, 2).unwrap();
        assert_eq!(set.counts.anchor + set.counts.child_anchor, 0);
        assert_eq!(set.counts.total(), 8000);
        assert_eq!(set.counts.twin_a, (8000 - 1200) / 2);
    }

    #[test]
    fn twin_midpoints_on_surface() {
        for (name, mesh) in fixtures::all() {
            let bvh = Bvh::build(mesh);
            let c = SchemeConfig {
                total_budget: 1000,
                ..cfg()
            };
            let set = fss_scheme(&bvh, &c, None, 7).unwrap();
            for (i, p) in set.points.iter().enumerate() {
                if p.kind == SampleKind::TwinA {
                    let q = &set.points[p.twin.unwrap()];
                    let mid = (p.position + q.position) / 2.0;
                    let d = bvh.closest_point(&mid).distance;
                    assert!(d < 1e-3, "{name} point {i}: {d}");
                }
            }
        }
    }

    #[test]
    fn slab_twins_clamped_and_inner_inside() {
        let bvh = Bvh::build(fixtures::slab());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = sample_surface(bvh.mesh(), 2000, None, &mut rng).unwrap();
        let c = SchemeConfig { sigma: 0.2, ..cfg() };
        let (pairs, skipped) = gen_twinned(&bvh, &base, &c, &mut rng);
        assert_eq!(skipped, 0);
        for p in &pairs {
            assert!(p.eps <= 0.8 * p.thickness / 2.0 + 1e-12);
            assert!(omni_label(&bvh, &p.inner, 0.05) > 0.5);
            assert!(bvh.is_inside(&p.inner));
        }
        // top and bottom faces: exactly 0.2 thick, so eps <= 0.08
        let flat: Vec<_> = pairs.iter().filter(|p| p.surface.normal.z.abs() > 0.99).collect();
        assert!(flat.iter().all(|p| p.eps <= 0.08 + 1e-6));
        assert!(flat.iter().any(|p| p.eps > 0.079));
    }

    #[test]
    fn twin_labels_antisymmetric_on_slab() {
        let bvh = Bvh::build(fixtures::slab());
        let set = fss_scheme(&bvh, &cfg(), None, 11).unwrap();
        for p in set.points.iter().filter(|p| p.kind == SampleKind::TwinA) {
            let q = &set.points[p.twin.unwrap()];
            let s = (p.label - 0.5) + (q.label - 0.5);
            // near the rim the nearest surface is a side face, not the sampled one
            if p.position.x.abs() < 0.85 && p.position.y.abs() < 0.85 {
                assert!(s.abs() <= 0.05, "{s}");
            }
        }
    }

    #[test]
    fn sphere_displacement_is_half_normal() {
        let bvh = Bvh::build(fixtures::icosphere(3, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base = sample_surface(bvh.mesh(), 4000, None, &mut rng).unwrap();
        let (pairs, _) = gen_twinned(&bvh, &base, &cfg(), &mut rng);
        let mut eps: Vec<f64> = pairs.iter().map(|p| p.eps / 0.05).collect();
        eps.sort_by(f64::total_cmp);
        // two-sample KS against an independently drawn half-normal sample
        let mut oracle = ChaCha8Rng::seed_from_u64(999);
        let mut reference: Vec<f64> = (0..4000)
            .map(|_| oracle.sample::<f64, _>(StandardNormal).abs())
            .collect();
        reference.sort_by(f64::total_cmp);
        let ks = ks_two_sample(&eps, &reference);
        let n = eps.len() as f64;
        let m = reference.len() as f64;
        let critical = 1.358 * ((n + m) / (n * m)).sqrt();
        assert!(ks < critical, "{ks} >= {critical}");
    }

    fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn anchor_labels_on_fin() {
        let bvh = fin();
        let mesh = bvh.mesh();
        let fin_face = (0..mesh.faces.len())
            .find(|&f| mesh.face_normal(f).x > 0.99 && fixtures::in_fin_region(&mesh.face_centroid(f)))
            .unwrap();
        let q = SurfaceSample::on_face(mesh, fin_face, [1.0 / 3.0; 3]);
        let fams = gen_anchors(&bvh, &[q], &cfg());
        assert_eq!(fams.len(), 1);
        let f = &fams[0];
        assert!((f.thickness - 0.02).abs() < 1e-4);
        let la = omni_label(&bvh, &f.anchor, 0.05);
        assert!((la - 0.60).abs() < 1e-3, "{la}");
        let mut last = la;
        for c in &f.children {
            let l = omni_label(&bvh, c, 0.05);
            assert!(l < last && l > 0.5, "{l}");
            last = l;
        }
    }

    #[test]
    fn counter_labels() {
        let bvh = Bvh::build(fixtures::slab());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg();
        let counters = gen_counters(&bvh, &c, 400, &mut rng);
        for p in &counters {
            let lp = crate::labeling::camera_label(&bvh, &p.primary, 0.05);
            let ls = crate::labeling::camera_label(&bvh, &p.secondary, 0.05);
            if p.hit {
                assert!(ls < lp && lp < 0.5);
                if p.primary.x.abs() < 0.9 && p.primary.y.abs() < 0.9 {
                    assert!((lp - 0.45).abs() < 1e-6, "{lp}");
                    assert!((ls - 0.35).abs() < 1e-6, "{ls}");
                }
            }
        }
        // the sphere leaves the corners of the square uncovered
        let s = Bvh::build(fixtures::icosphere(2, 0.5));
        let set = fss_scheme(&s, &SchemeConfig { total_budget: 2000, ..c }, None, 5).unwrap();
        let mut misses = 0;
        for p in set.points.iter().filter(|p| p.kind == SampleKind::CounterPrimary) {
            let q = &set.points[p.twin.unwrap()];
            assert!(q.label <= p.label);
            if p.position.x.hypot(p.position.y) > 0.55 {
                misses += 1;
                assert_eq!(p.label, 0.0);
                assert_eq!(q.label, 0.0);
            }
        }
        assert!(misses > 0);
    }

    #[test]
    fn region_guidance_density() {
        let bvh = fin();
        let alloc = allocate_budget(&bvh, None, &cfg()).unwrap();
        let set = fss_scheme(&bvh, &SchemeConfig { total_budget: 40000, ..cfg() }, None, 6).unwrap();
        let ratio = region_density_ratio(&bvh, &set.stats.base_faces, &alloc.thin_faces).unwrap();
        // anchors only draw from thin faces, so the ratio exceeds w_thin
        assert!(ratio >= 8.0 * 0.9, "{ratio}");

        // twins alone: weights applied as given
        let c = SchemeConfig {
            total_budget: 40000,
            features: FssFeatures {
                anchors: false,
                counters: false,
                ..Default::default()
            },
            ..cfg()
        };
        let set = fss_scheme(&bvh, &c, None, 6).unwrap();
        let ratio = region_density_ratio(&bvh, &set.stats.base_faces, &alloc.thin_faces).unwrap();
        assert!((ratio - 8.0).abs() <= 0.8, "{ratio}");
    }

    #[test]
    fn explicit_regions_override_auto() {
        let bvh = fin();
        let mut w = vec![1.0; bvh.mesh().faces.len()];
        w[0] = 5.0;
        let alloc = allocate_budget(&bvh, Some(&w), &cfg()).unwrap();
        assert_eq!(alloc.face_weights, w);
        let auto = allocate_budget(&bvh, None, &cfg()).unwrap();
        assert_eq!(auto.face_weights, thin_face_weights(&bvh, 0.05, 8.0));
        assert!(matches!(allocate_budget(&bvh, Some(&w[1..]), &cfg()), Err(Error::WeightCount { .. })));
        let off = SchemeConfig {
            features: FssFeatures {
                region_guidance: false,
                ..Default::default()
            },
            ..cfg()
        };
        assert!(allocate_budget(&bvh, Some(&w), &off).unwrap().face_weights.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ablations_change_composition() {
        let bvh = fin();
        let only = |f: FssFeatures| fss_scheme(&bvh, &SchemeConfig { features: f, ..cfg() }, None, 1).unwrap();
        let no_twins = only(FssFeatures {
            twins: false,
            ..Default::default()
        });
        assert_eq!(no_twins.counts.twin_a, 0);
        assert!(no_twins.counts.displaced > 0);
        let no_counters = only(FssFeatures {
            counters: false,
            ..Default::default()
        });
        assert_eq!(no_counters.counts.counter_primary, 0);
        let no_anchors = only(FssFeatures {
            anchors: false,
            ..Default::default()
        });
        assert_eq!(no_anchors.counts.anchor, 0);
        for s in [&no_twins, &no_counters, &no_anchors] {
            assert_eq!(s.counts.total(), 8000);
            s.validate().unwrap();
        }
    }

    #[test]
    fn deterministic() {
        let bvh = fin();
        let a = fss_scheme(&bvh, &cfg(), None, 42).unwrap();
        let b = fss_scheme(&bvh, &cfg(), None, 42).unwrap();
        assert_eq!(a, b);
        let c = fss_scheme(&bvh, &cfg(), None, 43).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn anchor_is_column_maximum_on_slab() {
        // a slab thin enough to have anchors
        let thin = fixtures::box_mesh(Vec3::new(-1.0, -1.0, -0.01), Vec3::new(1.0, 1.0, 0.01));
        let bvh = Bvh::build(thin);
        let set = fss_scheme(&bvh, &SchemeConfig { total_budget: 2000, ..cfg() }, None, 8).unwrap();
        let anchors: Vec<_> = set.points.iter().filter(|p| p.kind == SampleKind::Anchor).collect();
        assert!(!anchors.is_empty());
        let mut compared = 0;
        for a in &anchors {
            for p in &set.points {
                let dxy = (p.position.xy() - a.position.xy()).norm();
                if dxy < 2e-3 && p.kind != SampleKind::Anchor {
                    compared += 1;
                    assert!(p.label <= a.label + 0.5 * dxy / 0.05 + 1e-9, "{} > {}", p.label, a.label);
                }
            }
        }
        assert!(compared > 0);
    }
}
