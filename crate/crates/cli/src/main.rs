//! `fss`: fixtures, sample sets, training, extraction, evaluation and the
//! ablation experiment. Every command writes the fully materialized
//! `config.json` next to its outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fss_core::config::RunConfig;
use fss_core::extract::{marching_cubes, sample_dense_grid};
use fss_core::field::{load_checkpoint, save_checkpoint, train_sets, write_history_csv, Model};
use fss_core::mesh::{fixtures, load_mesh, render_normal_map, write_obj, Bvh, Side, TriangleMesh};
use fss_core::metrics::MetricReport;
use fss_core::pipeline::{
    epoch_sample_sets, evaluate_mesh, experiment_csv, experiment_report, model_thickness_plane, run_experiment, summarize, Reference,
};
use fss_core::schemes::format::{load_samples, save_samples};
use fss_core::schemes::{generate, Scheme};
use fss_core::{pfm, Error};

#[derive(Parser)]
#[command(name = "fss", version, about = "Thin-structure sampling schemes for occupancy fields")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`, which seeds every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the fixture meshes and their region weight files.
    Fixtures,
    /// Generate one sample set (FSS1) with a JSON summary.
    Sample {
        /// Overrides `sampler`.
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Train a model; without `--samples` fresh epoch sets are drawn.
    Train {
        #[arg(long, num_args = 1..)]
        samples: Vec<PathBuf>,
    },
    /// Extract the 0.5 level set of a checkpoint as OBJ.
    Extract {
        #[arg(long)]
        model: PathBuf,
        /// Overrides `eval.resolution`.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Score a reconstruction against the configured mesh or `--gt`.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        /// Groundtruth file; both meshes are then compared as stored.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Run the scheme × ablation × NSP × MTL × seed matrix.
    Experiment,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::NonFiniteLoss { .. } | Error::BudgetShortfall { .. } | Error::OutOfUnitRange { .. } => 3,
        Error::Io { .. } | Error::Stream(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> fss_core::Result<T> {
    r.map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> fss_core::Result<()> {
    io(path, std::fs::write(path, contents))
}

fn run(cli: Cli) -> fss_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Command::Sample { scheme: Some(s) } = &cli.command {
        cfg.sampler = *s;
    }
    if let Command::Extract { resolution: Some(r), .. } = &cli.command {
        cfg.eval.resolution = *r;
    }
    cfg.validate()?;
    let out = cfg.output.clone();
    io(&out, std::fs::create_dir_all(&out))?;
    cfg.write(out.join("config.json"))?;

    match cli.command {
        Command::Fixtures => {
            let written = fixtures::write_all(&out, cfg.scheme.tau_thin, cfg.scheme.w_thin)?;
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Command::Sample { .. } => {
            let reference = Reference::new(&cfg)?;
            let mut set = generate(&reference.bvh, cfg.sampler, &cfg.scheme, reference.regions.as_deref(), cfg.train.seed)?;
            set.mesh_id = reference.name.clone();
            save_samples(out.join("samples.fss1"), &set.points)?;
            let summary = summarize(&reference, &set)?;
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
            write(&out.join("summary.json"), &json)?;
            print!("{json}");
        }
        Command::Train { samples } => {
            let reference = Reference::new(&cfg)?;
            let sets = if samples.is_empty() {
                epoch_sample_sets(&reference.bvh, cfg.sampler, &cfg.scheme, reference.regions.as_deref(), cfg.train.seed, cfg.train.epoch_sets)?
                    .into_iter()
                    .map(|s| s.points)
                    .collect()
            } else {
                samples.iter().map(load_samples).collect::<fss_core::Result<Vec<_>>>()?
            };
            let mut model = Model::new(&cfg.train);
            let history = train_sets(&mut model, &sets, Some(&reference.plane), &cfg.train)?;
            save_checkpoint(&model, out.join("model.fssm"))?;
            write_history_csv(&history, out.join("history.csv"))?;
            reference.plane.write_csv(out.join("thickness_gt.csv"))?;
            model_thickness_plane(&model, reference.plane.height)?.write_csv(out.join("thickness_pred.csv"))?;
            if let Some(last) = history.last() {
                println!(
                    "step {}: occ {:.6} nsp {:.6} mtl {:.6} total {:.6}",
                    last.step, last.occ, last.nsp, last.mtl, last.total
                );
            }
        }
        Command::Extract { model, .. } => {
            let model = load_checkpoint(&model)?;
            let mesh = marching_cubes(&sample_dense_grid(&model, cfg.eval.resolution), 0.5);
            write_obj(&mesh, out.join("recon.obj"))?;
            println!(
                "{} vertices, {} faces, watertight: {}",
                mesh.vertices.len(),
                mesh.faces.len(),
                mesh.is_watertight()
            );
        }
        Command::Eval { recon, gt } => {
            let recon = load_mesh(&recon)?;
            let report = match gt {
                Some(gt) => {
                    let gt = load_mesh(&gt)?;
                    MetricReport::compute(&recon, &gt, cfg.eval.n, cfg.train.seed, cfg.eval.normal_resolution, 1.0)?
                }
                None => {
                    let reference = Reference::new(&cfg)?;
                    let e = evaluate_mesh(&recon, &reference, &cfg)?;
                    write_normal_maps(&out, &recon, reference.bvh.mesh(), cfg.eval.normal_resolution)?;
                    e.report
                }
            };
            write(&out.join("metrics.csv"), format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()))?;
            write(&out.join("metrics.txt"), report.text())?;
            print!("{}", report.text());
        }
        Command::Experiment => {
            let results = run_experiment(&cfg)?;
            let reference_name = cfg.mesh.path.as_ref().map_or(cfg.mesh.fixture.clone(), |p| p.display().to_string());
            write(&out.join("experiment.csv"), experiment_csv(&results))?;
            let text = experiment_report(&results, &reference_name);
            write(&out.join("experiment.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

/// Front and back normal maps of both meshes, as PFM.
fn write_normal_maps(out: &Path, recon: &TriangleMesh, gt: &TriangleMesh, res: usize) -> fss_core::Result<()> {
    for (name, mesh) in [("recon", recon), ("gt", gt)] {
        let bvh = Bvh::build(mesh.clone());
        for (side, tag) in [(Side::Front, "front"), (Side::Back, "back")] {
            let map = render_normal_map(&bvh, res, side);
            pfm::write_rgb(out.join(format!("normals_{name}_{tag}.pfm")), res, res, &map.to_rgb())?;
        }
    }
    Ok(())
}
