//! Timestamped run directories and the files every run leaves behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CheckLine, CheckStatus, LabConfig};
use crate::Result;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<command>-<UTC timestamp>`, adding a counter when the
    /// name is taken.
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        let base = format!("{command}-{stamp}");
        let mut path = root.join(&base);
        let mut n = 1;
        while path.exists() {
            path = root.join(format!("{base}-{n}"));
            n += 1;
        }
        std::fs::create_dir(&path)?;
        Ok(Self { path })
    }

    pub fn join(&self, rel: &str) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let p = self.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, serde_json::to_vec_pretty(value)?)?;
        Ok(p)
    }

    pub fn write_config(&self, cfg: &LabConfig, seeds: &[u64]) -> Result<()> {
        #[derive(Serialize)]
        struct Resolved<'a> {
            config_hash: String,
            seeds: &'a [u64],
            config: &'a LabConfig,
        }
        self.write_json(
            "config.resolved.json",
            &Resolved {
                config_hash: cfg.hash(),
                seeds,
                config: cfg,
            },
        )?;
        Ok(())
    }
}

/// Dataset and checkpoint hashes of every cell a run touched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HashManifest {
    pub datasets: BTreeMap<String, String>,
    pub checkpoints: BTreeMap<String, String>,
}

/// Machine-readable verdict of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub status: String,
    pub pass: bool,
    pub checks: Vec<CheckLine>,
}

impl Summary {
    pub fn new(command: &str, checks: Vec<CheckLine>) -> Self {
        let pass = checks.iter().all(|c| c.status.ok());
        Self {
            command: command.to_string(),
            status: if pass { "PASS" } else { "FAIL" }.to_string(),
            pass,
            checks,
        }
    }

    pub fn plumbing(command: &str) -> Self {
        Self::new(command, vec![CheckLine::new(command, CheckStatus::Pass, "artifacts written")])
    }
}
