//! Run manifests: a content-hash index of every artifact in a run directory
//! plus per-stage status records.

use crate::error::{Error, Result};
use crate::io::sha256_file;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory, with forward slashes.
    pub path: String,
    /// Artifact kind: weights | posterior | fv-image | fv-meta | latents |
    /// metrics | plot | csv | encoder | config | other.
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_digest: String,
    pub tool_version: String,
    pub created_unix: u64,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn infer_kind(rel: &str) -> &'static str {
    if rel.starts_with("weights/") {
        "weights"
    } else if rel.starts_with("posteriors/") {
        "posterior"
    } else if rel.starts_with("fvs/") && rel.ends_with(".png") {
        "fv-image"
    } else if rel.starts_with("fvs/") {
        "fv-meta"
    } else if rel.starts_with("latents/") {
        "latents"
    } else if rel.ends_with(".csv") {
        "csv"
    } else if rel.starts_with("metrics/") {
        "metrics"
    } else if rel.starts_with("plots/") {
        "plot"
    } else if rel.ends_with(".toml") {
        "config"
    } else if rel.ends_with("encoder.blab") {
        "encoder"
    } else if rel.ends_with(".md") {
        "summary"
    } else {
        "other"
    }
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        Self {
            schema_version: 1,
            config_digest: config_digest.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            stages: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn record_stage_ok(&mut self, name: &str) {
        self.stages.push(StageRecord { name: name.into(), status: "ok".into(), error: None });
    }

    pub fn record_stage_failed(&mut self, name: &str, err: &Error) {
        self.stages.push(StageRecord {
            name: name.into(),
            status: "failed".into(),
            error: Some(err.to_string()),
        });
    }

    fn rel_string(run_dir: &Path, path: &Path) -> String {
        path.strip_prefix(run_dir)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Hashes one file and adds it to the index (replacing any earlier entry
    /// for the same path).
    pub fn index_artifact(&mut self, run_dir: &Path, path: &Path, kind: &str) -> Result<()> {
        let rel = Self::rel_string(run_dir, path);
        let sha256 = sha256_file(path)?;
        let bytes = std::fs::metadata(path)?.len();
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(ArtifactEntry { path: rel, kind: kind.into(), sha256, bytes });
        Ok(())
    }

    /// Walks the run directory and indexes any file not yet present
    /// (excluding the manifest itself), inferring the kind from the path.
    pub fn index_remaining(&mut self, run_dir: &Path) -> Result<()> {
        let mut stack = vec![run_dir.to_path_buf()];
        let mut found: Vec<PathBuf> = Vec::new();
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.file_name().map(|n| n != MANIFEST_FILE).unwrap_or(true) {
                    found.push(p);
                }
            }
        }
        found.sort();
        for p in found {
            let rel = Self::rel_string(run_dir, &p);
            if !self.artifacts.iter().any(|a| a.path == rel) {
                let kind = infer_kind(&rel);
                self.index_artifact(run_dir, &p, kind)?;
            }
        }
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let s = std::fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Checks completeness (every file indexed) and integrity (hashes match).
    /// Returns the list of problems; empty means the manifest verifies.
    pub fn verify(&self, run_dir: &Path) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        for a in &self.artifacts {
            let p = run_dir.join(&a.path);
            if !p.exists() {
                problems.push(format!("missing: {}", a.path));
                continue;
            }
            let h = sha256_file(&p)?;
            if h != a.sha256 {
                problems.push(format!("hash mismatch: {}", a.path));
            }
        }
        // completeness
        let mut stack = vec![run_dir.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.file_name().map(|n| n != MANIFEST_FILE).unwrap_or(true) {
                    let rel = Self::rel_string(run_dir, &p);
                    if !self.artifacts.iter().any(|a| a.path == rel) {
                        problems.push(format!("unindexed: {rel}"));
                    }
                }
            }
        }
        Ok(problems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_verify_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("metrics")).unwrap();
        std::fs::write(dir.path().join("metrics/report.json"), b"{}").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"hello").unwrap();
        let mut m = RunManifest::new("digest");
        m.record_stage_ok("train");
        m.index_artifact(dir.path(), &dir.path().join("metrics/report.json"), "metrics").unwrap();
        m.index_remaining(dir.path()).unwrap();
        m.save(dir.path()).unwrap();

        let loaded = RunManifest::load(dir.path()).unwrap();
        assert_eq!(loaded.artifacts.len(), 2);
        assert!(loaded.verify(dir.path()).unwrap().is_empty());

        // mutate a file: hash mismatch reported
        std::fs::write(dir.path().join("notes.txt"), b"changed").unwrap();
        let problems = loaded.verify(dir.path()).unwrap();
        assert_eq!(problems.len(), 1);
        assert!(problems[0].contains("hash mismatch"));

        // drop a new file in: completeness violation
        std::fs::write(dir.path().join("extra.bin"), b"x").unwrap();
        let problems = loaded.verify(dir.path()).unwrap();
        assert!(problems.iter().any(|p| p.contains("unindexed: extra.bin")));
    }
}
