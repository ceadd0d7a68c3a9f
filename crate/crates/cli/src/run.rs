//! Run directory layout and content-hash provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qcspharm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const SUBJECTS: &str = "subjects.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Inputs and outputs of one stage, keyed by path relative to the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

/// Subject list fixed by the first stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub label: i32,
    pub source: String,
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    pub fn read(&self, rel: &str) -> Result<String> {
        fs::read_to_string(self.path(rel)).map_err(|_| Error::MissingArtifact(self.path(rel).display().to_string()))
    }

    pub fn read_bytes(&self, rel: &str) -> Result<Vec<u8>> {
        fs::read(self.path(rel)).map_err(|_| Error::MissingArtifact(self.path(rel).display().to_string()))
    }

    pub fn write(&self, rel: &str, contents: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, contents)?;
        Ok(())
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        if !self.exists(MANIFEST) {
            return Ok(RunManifest::default());
        }
        Ok(serde_json::from_str(&self.read(MANIFEST)?)?)
    }

    pub fn subjects(&self) -> Result<Vec<SubjectEntry>> {
        Ok(serde_json::from_str(&self.read(SUBJECTS)?)?)
    }

    /// Fails with `MissingArtifact` unless every path exists.
    pub fn require(&self, rels: &[String]) -> Result<()> {
        for r in rels {
            if !self.exists(r) {
                return Err(Error::MissingArtifact(self.path(r).display().to_string()));
            }
        }
        Ok(())
    }

    /// Hashes the listed files and stores them under `stage` in the manifest.
    pub fn record(&self, stage: &str, config_json: &str, inputs: &[String], outputs: &[String]) -> Result<StageRecord> {
        let hash_all = |rels: &[String]| -> Result<BTreeMap<String, String>> {
            rels.iter()
                .map(|r| Ok((r.clone(), sha256_hex(&self.read_bytes(r)?))))
                .collect()
        };
        let rec = StageRecord {
            config_sha256: sha256_hex(config_json.as_bytes()),
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        };
        let mut m = self.manifest()?;
        m.stages.insert(stage.to_string(), rec.clone());
        self.write(MANIFEST, &serde_json::to_string_pretty(&m)?)?;
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        run.write("a/x.txt", "hello").unwrap();
        let rec = run.record("s", "{}", &[], &["a/x.txt".into()]).unwrap();
        assert_eq!(run.manifest().unwrap().stages["s"], rec);
        assert!(matches!(run.require(&["nope".into()]), Err(Error::MissingArtifact(_))));
    }
}
