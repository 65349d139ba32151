//! Output layout and file helpers. Every artifact carries a `config_hash` line.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::config::Cell;
use crate::error::{CliError, Result};

pub const HASH_KEY: &str = "config_hash";

/// The four evaluation outputs `report` requires.
pub const REQUIRED_EVAL: [&str; 4] = [
    "loss_cells.csv",
    "anomaly_summary.csv",
    "decode_accuracy.csv",
    "noise_robustness.csv",
];

/// Paths under one run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn corpora(&self) -> PathBuf {
        self.root.join("corpora")
    }

    pub fn checkpoint(&self, cell: &Cell) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{}.ckpt", cell.tag()))
    }

    pub fn curve_csv(&self, cell: &Cell) -> PathBuf {
        self.root.join("curves").join(format!("{}.csv", cell.tag()))
    }

    pub fn curve_svg(&self, cell: &Cell) -> PathBuf {
        self.root.join("curves").join(format!("{}.svg", cell.tag()))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn anomaly_txt(&self, cell: &Cell) -> PathBuf {
        self.eval()
            .join("anomaly")
            .join(format!("{}.txt", cell.tag()))
    }

    pub fn anomaly_scores(&self, cell: &Cell) -> PathBuf {
        self.eval()
            .join("anomaly")
            .join(format!("{}_scores.csv", cell.tag()))
    }

    pub fn decode_txt(&self, cell: &Cell) -> PathBuf {
        self.eval()
            .join("decode")
            .join(format!("{}.txt", cell.tag()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

/// `path` with `.failed` appended to its file name.
pub fn failed_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".failed");
    PathBuf::from(s)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|source| CliError::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

pub fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != ErrorKind::NotFound => Err(CliError::Unwritable {
            path: path.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            CliError::MissingArtifacts(vec![path.display().to_string()])
        } else {
            CliError::bad(path, e.to_string())
        }
    })
}

/// `# config_hash: <hash>` followed by a newline.
pub fn hash_comment(hash: &str) -> String {
    format!("# {HASH_KEY}: {hash}\n")
}

/// The first `config_hash` value in `text`, whatever comment syntax wraps it.
pub fn find_hash(text: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let rest = line
            .trim()
            .trim_start_matches("<!--")
            .trim_start_matches('#')
            .trim_start();
        let value = rest
            .strip_prefix(HASH_KEY)?
            .trim_start()
            .strip_prefix(':')?;
        Some(value.trim().trim_end_matches("-->").trim().to_string())
    })
}

/// Fails unless `text` (read from `path`) carries `expected`.
pub fn check_hash(path: &Path, text: &str, expected: &str) -> Result<()> {
    match find_hash(text) {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(CliError::MixedConfig {
            path: path.to_path_buf(),
            found,
            expected: expected.to_string(),
        }),
        None => Err(CliError::bad(path, "no config_hash line")),
    }
}

/// Keeps only the paths that do not exist.
pub fn missing(paths: impl IntoIterator<Item = PathBuf>) -> Vec<String> {
    paths
        .into_iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect()
}
