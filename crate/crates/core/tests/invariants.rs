//! Property tests over randomized inputs.

use std::sync::OnceLock;

use fss_core::extract::{marching_cubes, DenseField};
use fss_core::field::{encode_checkpoint, decode_checkpoint, Adam, Model, TrainConfig, TriGrid, Variant};
use fss_core::labeling::{omni_label, truncated_label};
use fss_core::mesh::{fixtures, render_normal_map, sample_surface, Bvh, Side};
use fss_core::metrics::chamfer;
use fss_core::schemes::format::{decode, encode};
use fss_core::schemes::regions::{parse_region_weights, region_weights_string};
use fss_core::schemes::{generate, SampleKind, SamplePoint, Scheme, SchemeConfig};
use fss_core::thickness::{voxel_thickness_plane, ThicknessPlane};
use fss_core::{pfm, Vec3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fin() -> &'static Bvh {
    static B: OnceLock<Bvh> = OnceLock::new();
    B.get_or_init(|| Bvh::build(fixtures::thin_fin()))
}

fn torus() -> &'static Bvh {
    static B: OnceLock<Bvh> = OnceLock::new();
    B.get_or_init(|| Bvh::build(fixtures::torus(0.7, 0.3, 48, 24)))
}

fn point() -> impl Strategy<Value = Vec3> {
    (-1.2f64..1.2, -1.2f64..1.2, -1.2f64..1.2).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_stay_in_unit_interval(s in -10.0f64..10.0, delta in 1e-3f64..1.0) {
        let l = truncated_label(s, delta);
        prop_assert!((0.0..=1.0).contains(&l));
        prop_assert_eq!(l > 0.5, s > 0.0);
        prop_assert!(truncated_label(s + 1e-3, delta) >= l);
    }

    #[test]
    fn parity_flips_at_each_crossing(o in point(), d in point()) {
        prop_assume!(d.norm() > 0.1);
        let bvh = torus();
        let dir = d.normalize();
        let hits = bvh.raycast(&o, &dir);
        let mut inside = bvh.is_inside(&o);
        let mut last = 0.0;
        for h in &hits {
            // a grazing hit makes a crossing ambiguous; skip such rays
            prop_assume!(h.normal.dot(&dir).abs() > 1e-3 && h.t - last > 1e-6);
            prop_assert_eq!(h.entering, !inside);
            inside = !inside;
            last = h.t;
        }
        prop_assert!(!inside);
    }

    #[test]
    fn closest_point_is_a_lower_bound(p in point(), seed in any::<u64>()) {
        let bvh = torus();
        let d = bvh.closest_point(&p).distance;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in sample_surface(bvh.mesh(), 100, None, &mut rng).unwrap() {
            prop_assert!(d <= (s.position - p).norm() + 1e-12);
        }
    }

    #[test]
    fn local_thickness_bounded_by_diagonal(seed in any::<u64>()) {
        let bvh = fin();
        let diag = bvh.mesh().bbox().diagonal();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in sample_surface(bvh.mesh(), 50, None, &mut rng).unwrap() {
            if let Some(t) = bvh.local_thickness(&s) {
                prop_assert!(t > 0.0 && t <= diag);
            }
        }
    }

    #[test]
    fn omni_label_rises_inward(seed in any::<u64>()) {
        let bvh = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_surface(bvh.mesh(), 1, None, &mut rng).unwrap()[0];
        let t = bvh.local_thickness(&s).unwrap_or(0.0);
        let mut prev = 0.0;
        for k in 0..20 {
            let p = s.position - s.normal * (t / 2.0) * (k as f64 / 20.0);
            let l = omni_label(bvh, &p, 0.05);
            prop_assert!(l >= prev - 1e-9);
            prev = l;
        }
    }

    #[test]
    fn fss_sets_keep_budget_and_links(seed in any::<u64>(), half in 500usize..2000) {
        let cfg = SchemeConfig { total_budget: 2 * half, ..Default::default() };
        let set = generate(fin(), Scheme::Fss, &cfg, None, seed).unwrap();
        prop_assert_eq!(set.points.len(), cfg.total_budget);
        prop_assert_eq!(set.counts.total(), cfg.total_budget);
        prop_assert!(set.validate().is_ok());
        for (i, p) in set.points.iter().enumerate() {
            if p.kind == SampleKind::TwinA {
                let j = p.twin.unwrap();
                prop_assert_eq!(set.points[j].twin, Some(i));
                let mid = (p.position + set.points[j].position) / 2.0;
                prop_assert!(fin().closest_point(&mid).distance < 1e-3);
                prop_assert!(fin().is_inside(&set.points[j].position));
            }
        }
    }

    #[test]
    fn sample_file_round_trips(pts in prop::collection::vec((point(), 0.0f64..=1.0, 0u8..8), 0..50)) {
        let points: Vec<SamplePoint> = pts
            .iter()
            .map(|(p, l, k)| SamplePoint {
                position: p.map(|v| v as f32 as f64),
                label: *l as f32 as f64,
                normal: Vec3::z(),
                kind: match SampleKind::from_code(*k).unwrap() {
                    // unpaired kinds only, twin links are covered elsewhere
                    SampleKind::TwinA | SampleKind::TwinB | SampleKind::CounterPrimary | SampleKind::CounterSecondary => SampleKind::Displaced,
                    other => other,
                },
                twin: None,
            })
            .collect();
        prop_assert_eq!(decode(&encode(&points)).unwrap(), points);
    }

    #[test]
    fn region_weights_round_trip(w in prop::collection::vec(0.0f64..20.0, 1..40)) {
        prop_assume!(w.iter().any(|&v| v > 0.0));
        prop_assert_eq!(parse_region_weights(&region_weights_string(&w), w.len()).unwrap(), w);
    }

    #[test]
    fn pfm_round_trips(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..w * h).map(|_| rng.random::<f32>()).collect();
        let back = pfm::decode(&pfm::encode_gray(w, h, &data)).unwrap();
        prop_assert_eq!((back.width, back.height, back.channels), (w, h, 1));
        prop_assert_eq!(back.data, data);
    }

    #[test]
    fn thickness_csv_round_trips(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plane = ThicknessPlane::zeros(h, w);
        for v in plane.values.iter_mut() {
            *v = rng.random_range(0.0..2.0);
        }
        let back = ThicknessPlane::parse_csv(&plane.csv_string()).unwrap();
        prop_assert_eq!(back.values, plane.values);
    }

    #[test]
    fn voxel_plane_sums_to_volume(d in 1usize..6, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<f64> = (0..d * h * w).map(|_| rng.random()).collect();
        let dz = 2.0 / d as f64;
        let plane = voxel_thickness_plane(&grid, (d, h, w), dz).unwrap();
        let voxel = dz * (2.0 / h as f64) * (2.0 / w as f64);
        let direct: f64 = grid.iter().sum::<f64>() * voxel;
        prop_assert!((plane.volume() - direct).abs() < 1e-9);
    }

    #[test]
    fn trigrid_queries_stay_in_unit_interval(seed in any::<u64>(), p in point()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = TriGrid::new(3, 4, 5, 0.0);
        for t in g.theta.iter_mut() {
            *t = rng.random_range(-30.0..30.0);
        }
        let v = g.query(&p);
        prop_assert!(v >= 0.0 && v <= 1.0);
        let s = g.stencil(&p);
        prop_assert!((s.weight.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_grid_reads_back_constant(l in -8.0f64..8.0, p in point()) {
        let g = TriGrid::new(4, 3, 5, l);
        let s = 1.0 / (1.0 + (-l).exp());
        prop_assert!((g.query(&p) - s).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_step_is_a_no_op(params in prop::collection::vec(-5.0f64..5.0, 1..20), lr in 1e-4f64..1.0) {
        let mut p = params.clone();
        let mut adam = Adam::new(lr, p.len());
        adam.step(&mut p, &vec![0.0; params.len()]);
        prop_assert_eq!(p, params);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sphere_extraction_is_watertight(cx in -0.3f64..0.3, cy in -0.3f64..0.3, r in 0.2f64..0.6, res in 12usize..28) {
        let field = DenseField::from_fn(res, res, res, |p| {
            let d = (p - Vec3::new(cx, cy, 0.0)).norm();
            1.0 / (1.0 + ((d - r) * 20.0).exp())
        });
        let mesh = marching_cubes(&field, 0.5);
        prop_assert!(mesh.is_watertight(), "{:?}", mesh.topology());
        for v in &mesh.vertices {
            prop_assert!((field.query(v) - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(s in 0.8f64..1.2, seed in any::<u64>()) {
        let a = Bvh::build(fixtures::icosphere(2, 0.6));
        let b = Bvh::build(fixtures::icosphere(2, 0.6 * s));
        let ab = chamfer(&a, &b, 4000, seed).unwrap();
        let ba = chamfer(&b, &a, 4000, seed).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 0.02 * ab.max(1e-9) + 1e-12);
    }

    #[test]
    fn rendered_normals_are_unit(seed in 0usize..8) {
        let (_, mesh) = fixtures::all().swap_remove(seed);
        let bvh = Bvh::build(mesh);
        for side in [Side::Front, Side::Back] {
            let m = render_normal_map(&bvh, 24, side);
            for (n, &k) in m.normals.iter().zip(&m.mask) {
                if k {
                    prop_assert!((n.norm() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(variant in 0u8..3, seed in any::<u64>()) {
        let cfg = TrainConfig {
            variant: Variant::from_tag(variant).unwrap(),
            grid: [3, 4, 5],
            feature_resolution: 4,
            feature_channels: 2,
            hidden: 3,
            seed,
            ..Default::default()
        };
        let m = Model::new(&cfg);
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        prop_assert_eq!(encode_checkpoint(&back), encode_checkpoint(&m));
    }
}
