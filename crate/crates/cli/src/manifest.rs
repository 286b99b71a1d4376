use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to re-run a command and check its outputs.
///
/// Manifests hold no timestamps, so a faithful re-run rewrites an identical
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_bytes(config.to_string().as_bytes())
}

fn hash_all(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

impl Manifest {
    pub fn new(
        command: &str,
        args: Vec<String>,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Self> {
        Ok(Self {
            tool: format!("prominence {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            args,
            cwd: std::env::current_dir()?,
            config_hash: config_hash(&config),
            config,
            seed,
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails when any recorded input changed since the manifest was written.
    pub fn check_inputs(&self) -> Result<()> {
        for (path, want) in &self.inputs {
            let got = sha256_file(&self.cwd.join(path))?;
            if &got != want {
                bail!("input {path} changed since the manifest was written");
            }
        }
        Ok(())
    }

    /// Output paths whose current contents differ from the recorded hashes.
    pub fn mismatched_outputs(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (path, want) in &self.outputs {
            let p = self.cwd.join(path);
            if !p.exists() || &sha256_file(&p)? != want {
                bad.push(path.clone());
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn detects_changed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.txt");
        fs::write(&out, "one").unwrap();
        let m = Manifest::new(
            "x",
            vec![],
            serde_json::json!({"a": 1}),
            Some(3),
            &[],
            std::slice::from_ref(&out),
        )
        .unwrap();
        assert!(m.mismatched_outputs().unwrap().is_empty());
        fs::write(&out, "two").unwrap();
        assert_eq!(m.mismatched_outputs().unwrap().len(), 1);
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
    }
}
