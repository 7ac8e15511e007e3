//! Per-command provenance record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{display_path, sha256_file, write_json};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command: the effective configuration, its
/// hash, the seed and digests of the files read and written. Contains no
/// timestamps so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub method: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, method: Option<&str>, config: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            method: method.map(str::to_string),
            seed: config.seed,
            config_hash: config.hash(),
            config: config
                .entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn file_name(&self) -> String {
        match &self.method {
            Some(m) => format!("{}_{m}.manifest.json", self.command),
            None => format!("{}.manifest.json", self.command),
        }
    }

    fn digest(base: &Path, path: &Path) -> Result<FileDigest> {
        Ok(FileDigest {
            path: display_path(base, path),
            sha256: sha256_file(path)?,
        })
    }

    pub fn input(&mut self, base: &Path, path: &Path) -> Result<()> {
        self.inputs.push(Self::digest(base, path)?);
        Ok(())
    }

    pub fn output(&mut self, base: &Path, path: &Path) -> Result<()> {
        self.outputs.push(Self::digest(base, path)?);
        Ok(())
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Writes `<out>/<command>[_<method>].manifest.json` and returns its path.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(self.file_name());
        write_json(&path, self)?;
        Ok(path)
    }
}
