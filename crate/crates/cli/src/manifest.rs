use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use shtrans_core::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reads a JSON file, naming the path in I/O errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| with_path(e, path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn with_path(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| with_path(e, path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    fn of(path: &Path, label: String) -> Result<Self> {
        Ok(Self {
            path: label,
            sha256: sha256_file(path)?,
            bytes: fs::metadata(path).map_err(|e| with_path(e, path))?.len(),
        })
    }
}

/// Record of one CLI run.
///
/// `input_hash` covers the subcommand, config snapshot, seeds and input file
/// contents (not their paths); `output_hash` covers the output digests. A
/// rerun with the same inputs reproduces both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub subcommand: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub input_hash: String,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub output_hash: String,
}

pub struct ManifestBuilder {
    out_dir: PathBuf,
    subcommand: String,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(subcommand: &str, out_dir: &Path, config: &C) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| with_path(e, out_dir))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            subcommand: subcommand.into(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path, path.display().to_string())?);
        Ok(())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Registers an output file written (or about to be written) at `rel`.
    pub fn output(&mut self, rel: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == rel) {
            self.outputs.push(rel.into());
        }
        self.path(rel)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for rel in &self.outputs {
            outputs.push(FileDigest::of(&self.out_dir.join(rel), rel.clone())?);
        }
        let input_hash = {
            let key = serde_json::json!({
                "subcommand": self.subcommand,
                "config": self.config,
                "seeds": self.seeds,
                "inputs": self.inputs.iter().map(|d| &d.sha256).collect::<Vec<_>>(),
            });
            hex::encode(Sha256::digest(serde_json::to_vec(&key)?))
        };
        let output_hash = {
            let mut h = Sha256::new();
            for d in &outputs {
                h.update(format!("{} {}\n", d.sha256, d.path));
            }
            hex::encode(h.finalize())
        };
        let manifest = RunManifest {
            tool: concat!("shtrans ", env!("CARGO_PKG_VERSION")).into(),
            subcommand: self.subcommand,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            input_hash,
            outputs,
            output_hash,
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| with_path(e, &path))?;
        Ok(manifest)
    }
}
