//! Atomic artifact output and the per-command manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::RunConfig;
use crate::fail::{CliResult, Failure};

pub const TOOL: &str = "volgsc";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration; rerunning it reproduces the artifacts.
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    /// Artifact file names relative to the output directory.
    pub artifacts: Vec<FileHash>,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> CliResult<FileHash> {
    let bytes = std::fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects the files a command writes into its output directory.
pub struct ArtifactSet {
    dir: PathBuf,
    written: Vec<FileHash>,
}

impl ArtifactSet {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("output dir {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write `bytes` to `dir/name` via a temp file in the same directory and a rename.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(FileHash {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::data(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.written.iter().map(|f| f.path.as_str())
    }

    /// Write `<command>.manifest.json` and return it.
    pub fn finish(self, command: &str, config: RunConfig, inputs: Vec<FileHash>) -> CliResult<Manifest> {
        let manifest = Manifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config,
            inputs,
            artifacts: self.written,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(Manifest::file_name(command)), &bytes)?;
        Ok(manifest)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let io = |e: std::io::Error| Failure::data(format!("{}: {e}", path.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Shortest round-trip decimal form, `NA` for missing or non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}
