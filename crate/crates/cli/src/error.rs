use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, or a missing input. Exit code 1.
    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Lab(#[from] betacfg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn data(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Data {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_to_string(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `contents`, creating parent directories first.
pub fn write_file(path: &std::path::Path, contents: &[u8]) -> CliResult<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}
