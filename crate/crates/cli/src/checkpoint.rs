//! Checkpoint files: a versioned `key: value` header, a blank line, then one
//! named parameter array per line (`name rows cols v1 v2 ...`).
//!
//! Values are written with the shortest decimal form that parses back to the
//! same `f64`, so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use redcmp::corpus::file::parse_key_values;
use redcmp::corpus::{SetId, Subset};
use redcmp::{ParamSet, RedModel, Variant};

use crate::artifacts::{read_text, write_text, HASH_KEY};
use crate::error::{CliError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RedModel,
    pub dataset: SetId,
    pub train_subset: Subset,
    pub run_seed: u64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub epochs_completed: usize,
    pub final_loss: Option<f64>,
    pub config_hash: String,
}

/// Why a checkpoint could not be read.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadIssue {
    Malformed(String),
    Version(String),
    /// An array's name or shape disagrees with the header dimensions.
    Shape(String),
}

fn malformed(msg: impl Into<String>) -> LoadIssue {
    LoadIssue::Malformed(msg.into())
}

fn field<'a>(
    meta: &'a BTreeMap<String, String>,
    key: &str,
) -> std::result::Result<&'a str, LoadIssue> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| malformed(format!("header missing `{key}`")))
}

fn parse_field<T: std::str::FromStr>(
    meta: &BTreeMap<String, String>,
    key: &str,
) -> std::result::Result<T, LoadIssue> {
    field(meta, key)?
        .parse()
        .map_err(|_| malformed(format!("header `{key}` is invalid")))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "format_version: {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "variant: {}", m.variant);
        let _ = writeln!(out, "alphabet_size: {}", m.alphabet_size);
        let _ = writeln!(out, "hidden_dim: {}", m.hidden_dim());
        let _ = writeln!(out, "seq_len: {}", m.seq_len);
        let _ = writeln!(out, "dataset: {}", self.dataset);
        let _ = writeln!(out, "train_subset: {}", self.train_subset);
        let _ = writeln!(out, "run_seed: {}", self.run_seed);
        let _ = writeln!(out, "init_seed: {}", self.init_seed);
        let _ = writeln!(out, "shuffle_seed: {}", self.shuffle_seed);
        let _ = writeln!(out, "epochs_completed: {}", self.epochs_completed);
        match self.final_loss {
            Some(l) => {
                let _ = writeln!(out, "final_loss: {l}");
            }
            None => out.push_str("final_loss: none\n"),
        }
        let _ = writeln!(out, "{HASH_KEY}: {}", self.config_hash);
        out.push('\n');
        for (name, rows, cols, data) in m.params.named_arrays() {
            let _ = write!(out, "{name} {rows} {cols}");
            for v in data {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, LoadIssue> {
        let (head, body) = text
            .split_once("\n\n")
            .ok_or_else(|| malformed("no blank line after the header"))?;
        let meta = parse_key_values(head).map_err(|e| malformed(e.to_string()))?;
        let version = field(&meta, "format_version")?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(LoadIssue::Version(format!(
                "format_version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let variant: Variant = parse_field(&meta, "variant")?;
        let alphabet: usize = parse_field(&meta, "alphabet_size")?;
        let hidden: usize = parse_field(&meta, "hidden_dim")?;
        let seq_len: usize = parse_field(&meta, "seq_len")?;
        let final_loss = match field(&meta, "final_loss")? {
            "none" => None,
            s => Some(
                s.parse()
                    .map_err(|_| malformed("header `final_loss` is invalid"))?,
            ),
        };

        let mut model = RedModel::zeros(alphabet, hidden, seq_len, variant);
        let expected: Vec<(String, usize, usize)> = model
            .params
            .named_arrays()
            .into_iter()
            .map(|(n, r, c, _)| (n, r, c))
            .collect();
        let lines: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != expected.len() {
            return Err(LoadIssue::Shape(format!(
                "{} arrays, expected {}",
                lines.len(),
                expected.len()
            )));
        }
        for ((line, (name, rows, cols)), slot) in
            lines.iter().zip(&expected).zip(model.params.slices_mut())
        {
            let mut tokens = line.split_ascii_whitespace();
            let found = tokens.next().unwrap_or_default();
            let r: usize = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| malformed(format!("array {found}: bad row count")))?;
            let c: usize = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| malformed(format!("array {found}: bad column count")))?;
            if found != name || r != *rows || c != *cols {
                return Err(LoadIssue::Shape(format!(
                    "array {found} {r}x{c}, expected {name} {rows}x{cols}"
                )));
            }
            let values: Vec<f64> = tokens
                .map(|t| {
                    t.parse()
                        .map_err(|_| malformed(format!("array {name}: bad value {t:?}")))
                })
                .collect::<std::result::Result<_, _>>()?;
            if values.len() != slot.len() {
                return Err(LoadIssue::Shape(format!(
                    "array {name} holds {} values, expected {}",
                    values.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&values);
        }

        Ok(Self {
            model,
            dataset: parse_field(&meta, "dataset")?,
            train_subset: parse_field(&meta, "train_subset")?,
            run_seed: parse_field(&meta, "run_seed")?,
            init_seed: parse_field(&meta, "init_seed")?,
            shuffle_seed: parse_field(&meta, "shuffle_seed")?,
            epochs_completed: parse_field(&meta, "epochs_completed")?,
            final_loss,
            config_hash: field(&meta, HASH_KEY)?.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?).map_err(|issue| match issue {
            LoadIssue::Shape(detail) => CliError::DimensionMismatch {
                path: path.to_path_buf(),
                detail,
            },
            LoadIssue::Malformed(detail) | LoadIssue::Version(detail) => {
                CliError::bad(path, detail)
            }
        })
    }
}
