//! JSON run configuration shared by the command line and the experiment
//! runner. Unknown keys are rejected; serializing a parsed config writes
//! every default out, so the echo alone reproduces a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::TrainConfig;
use crate::labeling::LabelConfig;
use crate::mesh::{fixtures, load_mesh, normalize_to_camera_space, NormalizeTransform, TriangleMesh};
use crate::schemes::{Scheme, SchemeConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Built-in fixture name; ignored when `path` is set.
    pub fixture: String,
    /// OBJ or PLY file.
    pub path: Option<PathBuf>,
    /// Region weight file; without one FSS marks thin faces automatically.
    pub regions: Option<PathBuf>,
    /// Fit the bounding box into `[-1, 1]³` before use.
    pub normalize: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            fixture: "thin_fin".into(),
            path: None,
            regions: None,
            normalize: true,
        }
    }
}

/// A mesh in camera space plus the transform back to its original units.
#[derive(Clone, Debug)]
pub struct LoadedMesh {
    pub name: String,
    pub mesh: TriangleMesh,
    pub transform: NormalizeTransform,
}

impl MeshConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.path.is_none() && !fixtures::all().iter().any(|(n, _)| *n == self.fixture) {
            let names: Vec<_> = fixtures::all().into_iter().map(|(n, _)| n).collect();
            return Err(Error::config(
                format!("{prefix}.fixture"),
                format!("unknown fixture `{}`; expected one of {}", self.fixture, names.join(", ")),
            ));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<LoadedMesh> {
        let (name, raw) = match &self.path {
            Some(p) => (
                p.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned()),
                load_mesh(p)?,
            ),
            None => {
                let (n, m) = fixtures::all()
                    .into_iter()
                    .find(|(n, _)| *n == self.fixture)
                    .ok_or_else(|| Error::config("mesh.fixture", format!("unknown fixture `{}`", self.fixture)))?;
                (n.to_string(), m)
            }
        };
        raw.require_watertight()?;
        let (mesh, transform) = if self.normalize {
            normalize_to_camera_space(&raw)?
        } else {
            (raw, NormalizeTransform::identity())
        };
        Ok(LoadedMesh { name, mesh, transform })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Marching cubes grid resolution.
    pub resolution: usize,
    /// Normal map resolution.
    pub normal_resolution: usize,
    /// Occupancy grid resolution for fin recall.
    pub voxel_resolution: usize,
    /// Surface samples per direction for Chamfer and P2S.
    pub n: usize,
    /// Seeds of the experiment runner.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resolution: 128,
            normal_resolution: 256,
            voxel_resolution: 64,
            n: 10_000,
            seeds: vec![0, 1, 2],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v, min) in [
            ("resolution", self.resolution, 2),
            ("normal_resolution", self.normal_resolution, 1),
            ("voxel_resolution", self.voxel_resolution, 1),
            ("n", self.n, 1),
        ] {
            if v < min {
                return Err(Error::config(format!("{prefix}.{name}"), format!("must be at least {min}, got {v}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config(format!("{prefix}.seeds"), "needs at least one seed"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    /// Scheme used by `sample` and `train`.
    pub sampler: Scheme,
    pub scheme: SchemeConfig,
    pub labels: LabelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: MeshConfig::default(),
            sampler: Scheme::Fss,
            scheme: SchemeConfig::default(),
            labels: LabelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.scheme.labels = cfg.labels;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate("mesh")?;
        self.labels.validate("labels")?;
        self.scheme.validate("scheme")?;
        self.train.validate("train")?;
        self.eval.validate("eval")
    }

    /// Applies a seed override to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    /// Pretty JSON with every field present.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_materializes_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        for section in ["mesh", "sampler", "scheme", "labels", "train", "eval", "output"] {
            assert!(v.get(section).is_some(), "{section}");
        }
        assert_eq!(v["scheme"]["total_budget"], 8000);
        assert_eq!(v["train"]["lambda_nsp"], 0.1);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_json(r#"{"labels": {"delta_z": 0.1}, "train": {"steps": 7, "variant": "hybrid"}, "sampler": "dos"}"#)
            .unwrap()
            .with_seed(42);
        assert_eq!(cfg.scheme.labels.delta_z, 0.1);
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_json(), cfg.to_json());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        match RunConfig::from_json(r#"{"train": {"stepz": 3}}"#) {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "train.stepz");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_json(r#"{"extra": 1}"#), Err(Error::Config { .. })));
    }

    #[test]
    fn semantic_errors_name_their_path() {
        let field = |json: &str| match RunConfig::from_json(json) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(r#"{"labels": {"delta_omni": 0}}"#), "labels.delta_omni");
        assert_eq!(field(r#"{"scheme": {"total_budget": 7}}"#), "scheme.total_budget");
        assert_eq!(field(r#"{"train": {"learning_rate": -1}}"#), "train.learning_rate");
        assert_eq!(field(r#"{"eval": {"seeds": []}}"#), "eval.seeds");
        assert_eq!(field(r#"{"mesh": {"fixture": "teapot"}}"#), "mesh.fixture");
        assert_eq!(field(r#"{"train": {"steps": "many"}}"#), "train.steps");
    }

    #[test]
    fn loads_fixture_in_camera_space() {
        let m = MeshConfig::default().load().unwrap();
        assert_eq!(m.name, "thin_fin");
        assert!(m.mesh.bbox().extent().max() <= 2.0 + 1e-12);
        assert!((m.transform.scale - 1.0).abs() < 1e-12);
    }
}
