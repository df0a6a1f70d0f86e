//! Workspace layout and the run manifest that ties its artifacts together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// Seeds each stage last ran with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub corpus: Option<u64>,
    pub train: BTreeMap<String, u64>,
    pub vocoder: BTreeMap<String, u64>,
    pub eval: Option<u64>,
}

/// Paths are relative to the workspace root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub corpus: Option<PathBuf>,
    /// Checkpoint per system name.
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Vocoder checkpoint per voice.
    pub vocoders: BTreeMap<u8, PathBuf>,
    pub eval_index: Option<PathBuf>,
    pub seeds: Seeds,
}

/// Directory holding every artifact of one experiment.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path("run.json")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.path("corpus")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.path("checkpoints")
    }

    pub fn metrics_path(&self, system: &str) -> PathBuf {
        self.path("metrics").join(format!("{system}.jsonl"))
    }

    pub fn vocoder_dir(&self) -> PathBuf {
        self.path("vocoders")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.path("eval")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.path("reports")
    }

    pub fn ratings_path(&self) -> PathBuf {
        self.path("ratings.jsonl")
    }

    /// Manifest of the workspace, created on first use. An explicit
    /// experiment id must match the recorded one.
    pub fn open(&self, experiment: Option<&str>) -> Result<RunManifest> {
        let path = self.manifest_path();
        if !path.exists() {
            let id = experiment.map(str::to_string).unwrap_or_else(|| {
                self.root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "msms".into())
            });
            return Ok(RunManifest {
                experiment: id,
                corpus: None,
                checkpoints: BTreeMap::new(),
                vocoders: BTreeMap::new(),
                eval_index: None,
                seeds: Seeds::default(),
            });
        }
        let m: RunManifest = fsutil::read_json(&path)?;
        if let Some(id) = experiment.filter(|id| *id != m.experiment) {
            return Err(Error::Usage(format!(
                "workspace {} belongs to experiment {}, not {id}",
                self.root.display(),
                m.experiment
            )));
        }
        self.check(&m)?;
        Ok(m)
    }

    /// Every path the manifest references must exist.
    pub fn check(&self, m: &RunManifest) -> Result<()> {
        let paths = m
            .corpus
            .iter()
            .map(|p| ("corpus manifest", p))
            .chain(m.checkpoints.values().map(|p| ("checkpoint", p)))
            .chain(m.vocoders.values().map(|p| ("vocoder checkpoint", p)))
            .chain(m.eval_index.iter().map(|p| ("evaluation index", p)));
        for (what, p) in paths {
            let full = self.path(p);
            if !full.exists() {
                return Err(Error::Missing { what, path: full });
            }
        }
        Ok(())
    }

    pub fn save(&self, m: &RunManifest) -> Result<()> {
        fsutil::write_json(&self.manifest_path(), m)
    }
}
