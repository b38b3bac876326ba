//! End-to-end stages: per-epoch sample sets, training against a mesh,
//! evaluation of a trained model, and the ablation experiment matrix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{LoadedMesh, RunConfig};
use crate::error::{Error, Result};
use crate::extract::{marching_cubes, sample_dense_grid};
use crate::field::{train_sets, LossReport, Model, TrainConfig};
use crate::mesh::{fixtures, Bvh, TriangleMesh};
use crate::metrics::{fin_recall, normal_reprojection_view, region_mask, MetricReport, View};
use crate::par::map_range;
use crate::schemes::regions::read_region_weights;
use crate::schemes::{allocate_budget, generate, label_histogram, region_density_ratio, KindCounts, SampleSet, Scheme, SchemeConfig};
use crate::thickness::{exact_thickness_plane, mtl_loss, voxel_thickness_plane, voxelize, ThicknessPlane};

/// Seed of the `e`-th epoch set; set 0 uses `seed` itself so a standalone
/// sample file matches the first training epoch.
pub fn set_seed(seed: u64, e: usize) -> u64 {
    seed.wrapping_add((e as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn epoch_sample_sets(bvh: &Bvh, scheme: Scheme, cfg: &SchemeConfig, regions: Option<&[f64]>, seed: u64, n: usize) -> Result<Vec<SampleSet>> {
    map_range(n, |e| generate(bvh, scheme, cfg, regions, set_seed(seed, e)))
        .into_iter()
        .collect()
}

/// Groundtruth mesh with everything the stages derive from it.
pub struct Reference {
    pub name: String,
    pub bvh: Bvh,
    pub transform: crate::mesh::NormalizeTransform,
    pub regions: Option<Vec<f64>>,
    /// Exact thickness plane at the trigrid's `H × W`.
    pub plane: ThicknessPlane,
    /// Groundtruth-inside fin voxels, for the fin fixtures only and only
    /// when some voxel center falls inside the fin.
    pub fin_mask: Option<Vec<bool>>,
    pub voxel_resolution: usize,
}

impl Reference {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let LoadedMesh { name, mesh, transform } = cfg.mesh.load()?;
        let bvh = Bvh::build(mesh);
        let regions = match &cfg.mesh.regions {
            Some(p) => Some(read_region_weights(p, bvh.mesh().faces.len())?),
            None => None,
        };
        let [_, h, w] = cfg.train.grid;
        if h != w {
            return Err(Error::config("train.grid", "thickness planes need a square grid (H = W)"));
        }
        let plane = exact_thickness_plane(&bvh, h);
        let r = cfg.eval.voxel_resolution;
        let is_fin = cfg.mesh.path.is_none() && matches!(name.as_str(), "thin_fin" | "partial_fin");
        let fin_mask = is_fin
            .then(|| {
                // the partial fin's missing half still counts against recall
                let full = Bvh::build(fixtures::thin_fin());
                region_mask(&voxelize(&full, r, r, r), fixtures::in_fin_region)
            })
            // a coarse grid can miss the fin entirely
            .filter(|m| m.iter().any(|&v| v));
        Ok(Reference {
            name,
            bvh,
            transform,
            regions,
            plane,
            fin_mask,
            voxel_resolution: r,
        })
    }
}

/// Summary written next to a sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mesh: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub points: usize,
    pub counts: KindCounts,
    /// Ten equal bins over `[0, 1]`.
    pub label_histogram: Vec<usize>,
    /// Per-area base-sample density on thin faces over that elsewhere.
    pub thin_density_ratio: Option<f64>,
    pub skipped: usize,
    pub normal_fallbacks: usize,
}

pub fn summarize(reference: &Reference, set: &SampleSet) -> Result<SampleSummary> {
    let alloc = allocate_budget(&reference.bvh, reference.regions.as_deref(), &set.config)?;
    let ratio = if set.stats.base_faces.is_empty() {
        None
    } else {
        region_density_ratio(&reference.bvh, &set.stats.base_faces, &alloc.thin_faces)
    };
    Ok(SampleSummary {
        mesh: set.mesh_id.clone(),
        scheme: set.scheme,
        seed: set.seed,
        points: set.points.len(),
        counts: set.counts,
        label_histogram: label_histogram(&set.points, 10),
        thin_density_ratio: ratio,
        skipped: set.stats.skipped,
        normal_fallbacks: set.stats.normal_fallbacks,
    })
}

/// Draws `train.epoch_sets` fresh sets and trains a new model on them.
pub fn train_on_reference(reference: &Reference, scheme: Scheme, scheme_cfg: &SchemeConfig, train_cfg: &TrainConfig) -> Result<(Model, Vec<LossReport>)> {
    let sets = epoch_sample_sets(&reference.bvh, scheme, scheme_cfg, reference.regions.as_deref(), train_cfg.seed, train_cfg.epoch_sets)?;
    let points: Vec<_> = sets.into_iter().map(|s| s.points).collect();
    let mut model = Model::new(train_cfg);
    let history = train_sets(&mut model, &points, Some(&reference.plane), train_cfg)?;
    Ok((model, history))
}

/// Thickness plane of any model variant, at the reference plane's size.
pub fn model_thickness_plane(model: &Model, size: usize) -> Result<ThicknessPlane> {
    match (&model.trigrid, model.thickness_plane()) {
        (Some(t), Some(p)) if t.height == size && t.width == size => Ok(p),
        _ => {
            let f = sample_dense_grid(model, size);
            voxel_thickness_plane(&f.values, (size, size, size), 2.0 / size as f64)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub report: MetricReport,
    /// Normal reprojection error of the quarter-turned view.
    pub side_normal_err: f64,
    pub thickness_mse: f64,
    pub faces: usize,
}

/// Extracts the 0.5 level set and scores it. Metrics of an empty
/// reconstruction are NaN rather than an error.
pub fn evaluate_model(model: &Model, reference: &Reference, cfg: &RunConfig) -> Result<(ModelEval, TriangleMesh)> {
    let recon = marching_cubes(&sample_dense_grid(model, cfg.eval.resolution), 0.5);
    let mut eval = evaluate_mesh(&recon, reference, cfg)?;
    if let Some(mask) = &reference.fin_mask {
        let r = reference.voxel_resolution;
        let g = sample_dense_grid(model, r);
        eval.report.fin_recall = Some(fin_recall(&g.values, mask)?);
    }
    let (mse, _) = mtl_loss(&model_thickness_plane(model, reference.plane.height)?, &reference.plane)?;
    eval.thickness_mse = mse;
    Ok((eval, recon))
}

pub fn evaluate_mesh(recon: &TriangleMesh, reference: &Reference, cfg: &RunConfig) -> Result<ModelEval> {
    let e = &cfg.eval;
    let gt = reference.bvh.mesh();
    let scale = reference.transform.length_to_original(1.0);
    let nan = ModelEval {
        report: MetricReport {
            cd: f64::NAN,
            p2s: f64::NAN,
            normal_err: f64::NAN,
            normal_coverage_mismatch: 1.0,
            fin_recall: None,
            samples: e.n,
            seed: cfg.train.seed,
            resolution: e.normal_resolution,
        },
        side_normal_err: f64::NAN,
        thickness_mse: f64::NAN,
        faces: recon.faces.len(),
    };
    if recon.is_empty() {
        return Ok(nan);
    }
    let report = match MetricReport::compute(recon, gt, e.n, cfg.train.seed, e.normal_resolution, scale) {
        Ok(r) => r,
        Err(Error::EmptyInput(_)) => return Ok(nan),
        Err(err) => return Err(err),
    };
    let side = normal_reprojection_view(recon, gt, e.normal_resolution, View::Side).map_or(f64::NAN, |n| n.error);
    Ok(ModelEval {
        report,
        side_normal_err: side,
        thickness_mse: f64::NAN,
        faces: recon.faces.len(),
    })
}

/// A switched-off FSS feature; `Full` keeps all five.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoTwins,
    NoProximity,
    NoAnchors,
    NoCounters,
    NoRegionGuidance,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoTwins,
        Ablation::NoProximity,
        Ablation::NoAnchors,
        Ablation::NoCounters,
        Ablation::NoRegionGuidance,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTwins => "-twins",
            Ablation::NoProximity => "-proximity",
            Ablation::NoAnchors => "-anchors",
            Ablation::NoCounters => "-counters",
            Ablation::NoRegionGuidance => "-region-guidance",
        }
    }

    pub fn apply(self, cfg: &mut SchemeConfig) {
        let f = &mut cfg.features;
        match self {
            Ablation::Full => {}
            Ablation::NoTwins => f.twins = false,
            Ablation::NoProximity => f.proximity = false,
            Ablation::NoAnchors => f.anchors = false,
            Ablation::NoCounters => f.counters = false,
            Ablation::NoRegionGuidance => f.region_guidance = false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub scheme: Scheme,
    pub ablation: Ablation,
    pub nsp: bool,
    pub mtl: bool,
    pub seed: u64,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let on = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "{} {} nsp={} mtl={} seed={}",
            self.scheme,
            self.ablation.tag(),
            on(self.nsp),
            on(self.mtl),
            self.seed
        )
    }
}

/// Cells in report order. Feature ablations only apply to FSS; the
/// baselines run once per switch combination.
pub fn experiment_cells(seeds: &[u64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for scheme in [Scheme::Spatial, Scheme::Dos, Scheme::Fss] {
        let ablations: &[Ablation] = if scheme == Scheme::Fss { &Ablation::ALL } else { &[Ablation::Full] };
        for &ablation in ablations {
            for nsp in [true, false] {
                for mtl in [true, false] {
                    for &seed in seeds {
                        cells.push(Cell {
                            scheme,
                            ablation,
                            nsp,
                            mtl,
                            seed,
                        });
                    }
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub eval: ModelEval,
    pub last: LossReport,
}

pub fn run_cell(reference: &Reference, cfg: &RunConfig, cell: Cell) -> Result<CellResult> {
    let mut scheme_cfg = cfg.scheme;
    cell.ablation.apply(&mut scheme_cfg);
    let mut train_cfg = cfg.train;
    train_cfg.seed = cell.seed;
    if !cell.nsp {
        train_cfg.lambda_nsp = 0.0;
    }
    if !cell.mtl {
        train_cfg.lambda_mtl = 0.0;
    }
    let mut run_cfg = cfg.clone();
    run_cfg.train = train_cfg;
    let (model, history) = train_on_reference(reference, cell.scheme, &scheme_cfg, &train_cfg)?;
    let (eval, _) = evaluate_model(&model, reference, &run_cfg)?;
    Ok(CellResult {
        cell,
        eval,
        last: history.last().copied().unwrap_or_default(),
    })
}

/// Runs every cell; cells are independent, so they run in parallel and are
/// reported in fixed order. The first failing cell aborts the run.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<CellResult>> {
    let reference = Reference::new(cfg)?;
    let cells = experiment_cells(&cfg.eval.seeds);
    map_range(cells.len(), |k| {
        run_cell(&reference, cfg, cells[k]).map_err(|e| Error::Cell {
            cell: cells[k].to_string(),
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}

pub const EXPERIMENT_CSV_HEADER: &str =
    "scheme,ablation,nsp,mtl,seed,cd,p2s,normal_err,side_normal_err,coverage_mismatch,fin_recall,thickness_mse,faces,occ,nsp_loss,mtl_loss,total";

pub fn experiment_csv(results: &[CellResult]) -> String {
    let mut s = String::from(EXPERIMENT_CSV_HEADER);
    s.push('\n');
    for r in results {
        let (c, e) = (&r.cell, &r.eval);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.scheme,
            c.ablation.tag(),
            c.nsp,
            c.mtl,
            c.seed,
            e.report.cd,
            e.report.p2s,
            e.report.normal_err,
            e.side_normal_err,
            e.report.normal_coverage_mismatch,
            e.report.fin_recall.map(|v| v.to_string()).unwrap_or_default(),
            e.thickness_mse,
            e.faces,
            r.last.occ,
            r.last.nsp,
            r.last.mtl,
            r.last.total
        );
    }
    s
}

#[derive(Clone, Copy, Debug, Default)]
struct Means {
    cd: f64,
    p2s: f64,
    normal: f64,
    side: f64,
    recall: Option<f64>,
    thickness: f64,
}

fn means<'a>(rows: impl Iterator<Item = &'a CellResult>) -> Option<Means> {
    let rows: Vec<_> = rows.collect();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&CellResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let recall = rows.iter().map(|r| r.eval.report.fin_recall).collect::<Option<Vec<f64>>>();
    Some(Means {
        cd: avg(&|r| r.eval.report.cd),
        p2s: avg(&|r| r.eval.report.p2s),
        normal: avg(&|r| r.eval.report.normal_err),
        side: avg(&|r| r.eval.side_normal_err),
        recall: recall.map(|v| v.iter().sum::<f64>() / n),
        thickness: avg(&|r| r.eval.thickness_mse),
    })
}

fn row(s: &mut String, label: &str, m: &Means) {
    let recall = m.recall.map_or("-".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(
        s,
        "  {label:<28} {:>10.6} {:>10.6} {:>8.4} {:>8.4} {:>8} {:>10.6}",
        m.cd, m.p2s, m.normal, m.side, recall, m.thickness
    );
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(s, "\n{title}");
    let _ = writeln!(
        s,
        "  {:<28} {:>10} {:>10} {:>8} {:>8} {:>8} {:>10}",
        "", "CD", "P2S", "normal", "side", "recall", "thick_mse"
    );
}

/// Compares `on` against `off` and says which metrics improved.
fn verdict(on: &Means, off: &Means) -> String {
    let mut better = Vec::new();
    let mut worse = Vec::new();
    for (name, a, b) in [
        ("CD", on.cd, off.cd),
        ("P2S", on.p2s, off.p2s),
        ("normal", on.normal, off.normal),
        ("thickness", on.thickness, off.thickness),
    ] {
        if a <= b {
            better.push(name)
        } else {
            worse.push(name)
        }
    }
    if let (Some(a), Some(b)) = (on.recall, off.recall) {
        if a >= b {
            better.push("recall")
        } else {
            worse.push("recall")
        }
    }
    format!("improves: {}; regresses: {}", join(&better), join(&worse))
}

fn join(v: &[&str]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.join(", ")
    }
}

/// Text report with three comparisons, each averaged over seeds: the FSS
/// feature ablation, NSP on/off per scheme and MTL on/off per scheme.
pub fn experiment_report(results: &[CellResult], mesh: &str) -> String {
    let sel = |scheme: Scheme, ab: Ablation, nsp: bool, mtl: bool| {
        means(
            results
                .iter()
                .filter(move |r| r.cell.scheme == scheme && r.cell.ablation == ab && r.cell.nsp == nsp && r.cell.mtl == mtl),
        )
    };
    let mut s = format!("Scheme ablation on `{mesh}`; metrics are seed means, lower is better except recall.\n");
    let seeds: std::collections::BTreeSet<u64> = results.iter().map(|r| r.cell.seed).collect();
    let _ = writeln!(s, "{} cells, seeds {:?}", results.len(), seeds);

    header(&mut s, "[A] FSS feature ablation (NSP on, MTL on)");
    let full = sel(Scheme::Fss, Ablation::Full, true, true);
    for ab in Ablation::ALL {
        if let Some(m) = sel(Scheme::Fss, ab, true, true) {
            let label = if ab == Ablation::Full { "FSS".to_string() } else { format!("FSS {}", ab.tag()) };
            row(&mut s, &label, &m);
            if let (Some(f), false) = (&full, ab == Ablation::Full) {
                let _ = writeln!(s, "    removing it vs full FSS: {}", verdict(&m, f).replace("improves", "better").replace("regresses", "worse"));
            }
        }
    }
    if let Some(m) = sel(Scheme::Fss, Ablation::Full, false, false) {
        row(&mut s, "FSS w/o NSP w/o MTL", &m);
    }

    for (title, nsp_axis) in [("[B] NSP on vs off (MTL off)", true), ("[C] MTL on vs off (NSP off)", false)] {
        header(&mut s, title);
        for scheme in [Scheme::Spatial, Scheme::Dos, Scheme::Fss] {
            let (on, off) = if nsp_axis {
                (sel(scheme, Ablation::Full, true, false), sel(scheme, Ablation::Full, false, false))
            } else {
                (sel(scheme, Ablation::Full, false, true), sel(scheme, Ablation::Full, false, false))
            };
            let what = if nsp_axis { "NSP" } else { "MTL" };
            if let (Some(on), Some(off)) = (on, off) {
                row(&mut s, &format!("{scheme} w/o {what}"), &off);
                row(&mut s, &format!("{scheme} w {what}"), &on);
                let _ = writeln!(s, "    {what} {}", verdict(&on, &off));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_matrix() {
        let cells = experiment_cells(&[0, 1, 2]);
        assert_eq!(cells.len(), (1 + 1 + 6) * 2 * 2 * 3);
        let distinct: std::collections::HashSet<_> = cells.iter().map(|c| (c.scheme, c.ablation, c.nsp, c.mtl, c.seed)).collect();
        assert_eq!(distinct.len(), cells.len());
        assert!(cells.iter().filter(|c| c.scheme != Scheme::Fss).all(|c| c.ablation == Ablation::Full));
    }

    #[test]
    fn set_zero_keeps_seed() {
        assert_eq!(set_seed(17, 0), 17);
        assert_ne!(set_seed(17, 1), set_seed(17, 2));
    }

    #[test]
    fn ablation_switches_one_feature() {
        for ab in Ablation::ALL {
            let mut cfg = SchemeConfig::default();
            ab.apply(&mut cfg);
            let f = cfg.features;
            let off = [f.twins, f.proximity, f.anchors, f.counters, f.region_guidance].iter().filter(|&&b| !b).count();
            assert_eq!(off, usize::from(ab != Ablation::Full));
        }
    }

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.scheme.total_budget = 400;
        cfg.train.steps = 20;
        cfg.train.batch_size = 128;
        cfg.train.grid = [16, 16, 16];
        cfg.train.epoch_sets = 2;
        cfg.eval.resolution = 24;
        cfg.eval.normal_resolution = 32;
        cfg.eval.voxel_resolution = 16;
        cfg.eval.n = 500;
        cfg.eval.seeds = vec![5];
        cfg
    }

    #[test]
    fn tiny_experiment_report() {
        let cfg = tiny_config();
        let results = run_experiment(&cfg).unwrap();
        assert_eq!(results.len(), 8 * 4);
        let csv = experiment_csv(&results);
        assert_eq!(csv.lines().count(), results.len() + 1);
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), EXPERIMENT_CSV_HEADER.split(',').count());
        }
        let text = experiment_report(&results, "thin_fin");
        for mark in ["[A]", "[B]", "[C]", "FSS -anchors", "spatial w NSP", "dos w/o MTL", "FSS w/o NSP w/o MTL"] {
            assert!(text.contains(mark), "{mark}\n{text}");
        }
        assert!(results.iter().all(|r| r.last.total.is_finite()));
    }

    #[test]
    fn sample_summary_reports_thin_density() {
        let cfg = tiny_config();
        let reference = Reference::new(&cfg).unwrap();
        let set = generate(&reference.bvh, Scheme::Fss, &cfg.scheme, None, 1).unwrap();
        let s = summarize(&reference, &set).unwrap();
        assert!(s.counts.anchor > 0);
        assert!(s.thin_density_ratio.unwrap() >= 4.0, "{s:?}");
        assert_eq!(s.label_histogram.iter().sum::<usize>(), s.points);
    }
}
