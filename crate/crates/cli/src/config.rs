//! Run configuration: flat `key = value` text, lists comma-separated.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::str::FromStr;

use redcmp::corpus::{CorpusConfig, SetId, Subset};
use redcmp::numerics::derive_seed;
use redcmp::train::HyperParams;
use redcmp::Variant;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

const INIT_STREAM: u64 = 0x696E_6974;
const SHUFFLE_STREAM: u64 = 0x7368_7566_666C_65;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub datasets: Vec<SetId>,
    /// Normal subsets models are trained on.
    pub train_subsets: Vec<Subset>,
    pub variants: Vec<Variant>,
    /// Window lengths per dataset.
    pub seq_lens: BTreeMap<SetId, Vec<usize>>,
    /// Extra Model-C-only lengths, evaluated wherever a dataset's grid lacks them.
    pub probe_seq_lens: Vec<usize>,
    /// `None` means non-overlapping windows (stride = L).
    pub stride: Option<usize>,
    pub hidden_dim: usize,
    pub corpus: CorpusConfig,
    /// `seed` is ignored; every cell derives its own shuffle seed.
    pub hyper: HyperParams,
    pub seeds: Vec<u64>,
    pub threshold_percentile: f64,
    pub decode_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            datasets: SetId::ALL.to_vec(),
            train_subsets: vec![Subset::Clear, Subset::Noise],
            variants: vec![Variant::A, Variant::B, Variant::C],
            seq_lens: SetId::ALL
                .iter()
                .map(|&s| (s, default_seq_lens(s)))
                .collect(),
            probe_seq_lens: vec![3, 8],
            stride: None,
            hidden_dim: 64,
            corpus: CorpusConfig::default(),
            hyper: HyperParams::default(),
            seeds: vec![1, 2, 3, 4, 5],
            threshold_percentile: 99.0,
            decode_samples: 8,
        }
    }
}

/// Multiples of the pattern length plus three lengths that are not.
pub fn default_seq_lens(set: SetId) -> Vec<usize> {
    match set {
        SetId::A => vec![3, 5, 7, 8, 10, 15],
        SetId::B | SetId::C => vec![4, 8, 11, 15, 30, 45],
    }
}

/// One trained model: a (seed, dataset, training subset, L, variant) tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub seed: u64,
    pub set: SetId,
    pub train_subset: Subset,
    pub seq_len: usize,
    pub variant: Variant,
    /// Outside the dataset's configured length grid.
    pub probe: bool,
}

impl Cell {
    pub fn tag(&self) -> String {
        format!(
            "seed{}_set{}_{}_L{}_{}",
            self.seed, self.set, self.train_subset, self.seq_len, self.variant
        )
    }

    pub fn role(&self) -> &'static str {
        if self.probe {
            "probe"
        } else {
            "grid"
        }
    }

    fn stream(&self, tag: u64) -> u64 {
        derive_seed(
            self.seed,
            &[
                tag,
                self.set.letter() as u64,
                self.train_subset as u64,
                self.seq_len as u64,
            ],
        )
    }

    /// Identical for all variants of a (seed, dataset, subset, L) slot.
    pub fn init_seed(&self) -> u64 {
        self.stream(INIT_STREAM)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.stream(SHUFFLE_STREAM)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| usage(format!("`{key}`: cannot parse {:?}: {e}", s.trim())))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| usage(format!("`{key}`: cannot parse {value:?}: {e}")))
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn seq_lens_key(set: SetId) -> String {
    format!("seq_lens_{}", set.letter().to_ascii_lowercase())
}

fn require_unique<T: PartialEq + Display>(key: &str, items: &[T]) -> Result<()> {
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(usage(format!("`{key}` lists {a} twice")));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses a config file; keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected `key = value`", n + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "datasets" => self.datasets = parse_list(key, value)?,
            "train_subsets" => self.train_subsets = parse_list(key, value)?,
            "variants" => self.variants = parse_list(key, value)?,
            "seq_lens" => {
                let lens: Vec<usize> = parse_list(key, value)?;
                for set in SetId::ALL {
                    self.seq_lens.insert(set, lens.clone());
                }
            }
            "seq_lens_a" => {
                self.seq_lens.insert(SetId::A, parse_list(key, value)?);
            }
            "seq_lens_b" => {
                self.seq_lens.insert(SetId::B, parse_list(key, value)?);
            }
            "seq_lens_c" => {
                self.seq_lens.insert(SetId::C, parse_list(key, value)?);
            }
            "probe_seq_lens" => self.probe_seq_lens = parse_list(key, value)?,
            "stride" => {
                self.stride = if value == "auto" {
                    None
                } else {
                    Some(parse_one(key, value)?)
                }
            }
            "hidden_dim" => self.hidden_dim = parse_one(key, value)?,
            "corpus_length" => self.corpus.length = parse_one(key, value)?,
            "noise_sigma" => self.corpus.noise_sigma = parse_one(key, value)?,
            "corruption_prob" => self.corpus.corruption_prob = parse_one(key, value)?,
            "learning_rate" => self.hyper.learning_rate = parse_one(key, value)?,
            "adam_beta1" => self.hyper.adam_beta1 = parse_one(key, value)?,
            "adam_beta2" => self.hyper.adam_beta2 = parse_one(key, value)?,
            "adam_eps" => self.hyper.adam_eps = parse_one(key, value)?,
            "epochs" => self.hyper.epochs = parse_one(key, value)?,
            "batch_size" => self.hyper.batch_size = parse_one(key, value)?,
            "grad_clip_norm" => self.hyper.grad_clip_norm = parse_one(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "threshold_percentile" => self.threshold_percentile = parse_one(key, value)?,
            "decode_samples" => self.decode_samples = parse_one(key, value)?,
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(usage("`datasets` is empty"));
        }
        if self.train_subsets.is_empty() {
            return Err(usage("`train_subsets` is empty"));
        }
        if let Some(s) = self.train_subsets.iter().find(|s| s.is_abnormal()) {
            return Err(usage(format!("cannot train on abnormal subset {s}")));
        }
        if self.variants.is_empty() {
            return Err(usage("`variants` is empty"));
        }
        if self.seeds.is_empty() {
            return Err(usage("`seeds` is empty"));
        }
        require_unique("datasets", &self.datasets)?;
        require_unique("train_subsets", &self.train_subsets)?;
        require_unique("variants", &self.variants)?;
        require_unique("seeds", &self.seeds)?;
        require_unique("probe_seq_lens", &self.probe_seq_lens)?;
        for &set in &self.datasets {
            let lens = &self.seq_lens[&set];
            if lens.is_empty() {
                return Err(usage(format!("`{}` is empty", seq_lens_key(set))));
            }
            require_unique(&seq_lens_key(set), lens)?;
        }
        let longest = self
            .datasets
            .iter()
            .flat_map(|s| self.seq_lens[s].iter())
            .chain(&self.probe_seq_lens)
            .copied()
            .max()
            .unwrap_or(0);
        if self
            .seq_lens
            .values()
            .flatten()
            .chain(&self.probe_seq_lens)
            .any(|&l| l == 0)
        {
            return Err(usage("sequence lengths must be >= 1"));
        }
        if self.corpus.length < 2 * longest || self.corpus.length < 15 {
            return Err(usage(format!(
                "corpus_length {} too short for L = {longest}",
                self.corpus.length
            )));
        }
        if !(self.corpus.noise_sigma.is_finite() && self.corpus.noise_sigma >= 0.0) {
            return Err(usage("noise_sigma must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.corpus.corruption_prob) {
            return Err(usage("corruption_prob must lie in [0, 1]"));
        }
        if self.stride == Some(0) {
            return Err(usage("stride must be >= 1"));
        }
        if self.hidden_dim == 0 {
            return Err(usage("hidden_dim must be >= 1"));
        }
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile <= 100.0) {
            return Err(usage("threshold_percentile must lie in (0, 100]"));
        }
        if self.decode_samples == 0 {
            return Err(usage("decode_samples must be >= 1"));
        }
        self.hyper.validate().map_err(|e| usage(e.to_string()))
    }

    /// Canonical serialization; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("datasets", join(&self.datasets));
        kv("train_subsets", join(&self.train_subsets));
        kv("variants", join(&self.variants));
        for set in SetId::ALL {
            kv(&seq_lens_key(set), join(&self.seq_lens[&set]));
        }
        kv("probe_seq_lens", join(&self.probe_seq_lens));
        kv(
            "stride",
            self.stride.map_or("auto".into(), |s| s.to_string()),
        );
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("corpus_length", self.corpus.length.to_string());
        kv("noise_sigma", self.corpus.noise_sigma.to_string());
        kv("corruption_prob", self.corpus.corruption_prob.to_string());
        kv("learning_rate", h.learning_rate.to_string());
        kv("adam_beta1", h.adam_beta1.to_string());
        kv("adam_beta2", h.adam_beta2.to_string());
        kv("adam_eps", h.adam_eps.to_string());
        kv("epochs", h.epochs.to_string());
        kv("batch_size", h.batch_size.to_string());
        kv("grad_clip_norm", h.grad_clip_norm.to_string());
        kv("seeds", join(&self.seeds));
        kv(
            "threshold_percentile",
            self.threshold_percentile.to_string(),
        );
        kv("decode_samples", self.decode_samples.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every cell to train, in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &set in &self.datasets {
                for &train_subset in &self.train_subsets {
                    let grid = &self.seq_lens[&set];
                    for &seq_len in grid {
                        for &variant in &self.variants {
                            out.push(Cell {
                                seed,
                                set,
                                train_subset,
                                seq_len,
                                variant,
                                probe: false,
                            });
                        }
                    }
                    if !self.variants.contains(&Variant::C) {
                        continue;
                    }
                    for &seq_len in &self.probe_seq_lens {
                        if !grid.contains(&seq_len) {
                            out.push(Cell {
                                seed,
                                set,
                                train_subset,
                                seq_len,
                                variant: Variant::C,
                                probe: true,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}
