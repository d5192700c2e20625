//! Manifest written beside every command's outputs: config, seed and file hashes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{write_file, CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest(path: &Path) -> CliResult<FileDigest> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

impl Manifest {
    /// Hashes `inputs` and `outputs` and writes `manifest-<command>.json`
    /// into `dir`.
    pub fn write(
        command: &str,
        cfg: &RunConfig,
        dir: &Path,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> CliResult<PathBuf> {
        let m = Manifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            inputs: inputs.iter().map(|p| digest(p)).collect::<CliResult<_>>()?,
            outputs: outputs.iter().map(|p| digest(p)).collect::<CliResult<_>>()?,
            config: cfg.clone(),
        };
        let path = dir.join(format!("manifest-{command}.json"));
        let mut text = serde_json::to_string_pretty(&m).expect("manifest is serialisable");
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}
