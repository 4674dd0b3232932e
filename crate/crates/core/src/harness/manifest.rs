use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance record written next to the outputs of every stage. Inputs
/// name the checksums of upstream artifacts, so the manifests of a run form
/// a chain from the demonstrations to the evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config_text: &str) -> Self {
        Self {
            stage: stage.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            ..Self::default()
        }
    }

    pub fn file_name(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    pub fn input(&mut self, name: &str, sha: &str) -> &mut Self {
        self.inputs.insert(name.to_string(), sha.to_string());
        self
    }

    /// Hashes `dir/name` and lists it as an output.
    pub fn output(&mut self, dir: &Path, name: &str) -> Result<&mut Self> {
        let sha = file_sha256(&dir.join(name))?;
        self.outputs.insert(name.to_string(), sha);
        Ok(self)
    }

    pub fn note(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.summary.insert(key.to_string(), value.to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(Self::file_name(&self.stage)), text)?;
        Ok(())
    }

    pub fn read(dir: &Path, stage: &str) -> Result<Self> {
        let path = dir.join(Self::file_name(stage));
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.to_string(),
                path,
            });
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Checksum this stage recorded for its output `name`.
    pub fn output_sha(&self, name: &str) -> Result<&str> {
        self.outputs
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::ChainMismatch(format!("stage `{}` lists no output `{name}`", self.stage)))
    }

    /// Fails unless input `name` was recorded with checksum `sha`.
    pub fn expect_input(&self, name: &str, sha: &str) -> Result<()> {
        match self.inputs.get(name) {
            Some(s) if s == sha => Ok(()),
            Some(s) => Err(Error::ChainMismatch(format!(
                "stage `{}` was built from {name} {}, but the current {name} is {}; rerun `{}`",
                self.stage,
                &s[..12.min(s.len())],
                &sha[..12.min(sha.len())],
                self.stage
            ))),
            None => Err(Error::ChainMismatch(format!("stage `{}` lists no input `{name}`", self.stage))),
        }
    }
}
