//! Synthetic symbolic corpora: three repeating patterns, four subsets each,
//! one-hot encoding and windowing into (input, target) pairs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Rng, Scalar, Vector};

pub mod file;

pub const DEFAULT_LENGTH: usize = 3000;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.2;
pub const DEFAULT_CORRUPTION_PROB: f64 = 0.3;
/// Minimum fraction of positions an abnormal stream must differ from the pattern.
pub const MIN_ABNORMAL_FRACTION: f64 = 0.1;

const NOISE_STREAM: u64 = 0x6E6F_6973_65;
const CORRUPT_STREAM: u64 = 0x636F_7272_7570_74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SetId {
    A,
    B,
    C,
}

impl SetId {
    pub const ALL: [SetId; 3] = [SetId::A, SetId::B, SetId::C];

    pub fn pattern(self) -> &'static str {
        match self {
            SetId::A => "ABCDE",
            SetId::B => "ABCDEFGHIJKLMNO",
            SetId::C => "ABCADEAFGAHIAJK",
        }
    }

    pub fn pattern_len(self) -> usize {
        self.pattern().len()
    }

    /// Set-A is encoded over its five symbols only; the others use all fifteen.
    pub fn alphabet_size(self) -> usize {
        match self {
            SetId::A => 5,
            SetId::B | SetId::C => 15,
        }
    }

    pub fn pattern_symbols(self) -> Vec<usize> {
        self.pattern()
            .bytes()
            .map(|b| (b - b'A') as usize)
            .collect()
    }

    pub fn letter(self) -> char {
        match self {
            SetId::A => 'A',
            SetId::B => 'B',
            SetId::C => 'C',
        }
    }
}

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for SetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().trim_start_matches("SET-") {
            "A" => Ok(SetId::A),
            "B" => Ok(SetId::B),
            "C" => Ok(SetId::C),
            other => Err(Error::Parse(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Clear,
    Noise,
    Abnormal,
    Abnoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Class {
    Normal,
    Abnormal,
}

impl Subset {
    pub const ALL: [Subset; 4] = [
        Subset::Clear,
        Subset::Noise,
        Subset::Abnormal,
        Subset::Abnoise,
    ];

    pub fn is_noisy(self) -> bool {
        matches!(self, Subset::Noise | Subset::Abnoise)
    }

    pub fn is_abnormal(self) -> bool {
        matches!(self, Subset::Abnormal | Subset::Abnoise)
    }

    pub fn class(self) -> Class {
        if self.is_abnormal() {
            Class::Abnormal
        } else {
            Class::Normal
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Clear => "clear",
            Subset::Noise => "noise",
            Subset::Abnormal => "abnormal",
            Subset::Abnoise => "abnoise",
        }
    }

    /// Capitalized form used in decode reports.
    pub fn title(self) -> &'static str {
        match self {
            Subset::Clear => "Clear",
            Subset::Noise => "Noise",
            Subset::Abnormal => "Abnormal",
            Subset::Abnoise => "Abnoise",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clear" => Ok(Subset::Clear),
            "noise" => Ok(Subset::Noise),
            "abnormal" => Ok(Subset::Abnormal),
            "abnoise" => Ok(Subset::Abnoise),
            other => Err(Error::Parse(format!("unknown subset {other:?}"))),
        }
    }
}

impl Class {
    pub fn name(self) -> &'static str {
        match self {
            Class::Normal => "normal",
            Class::Abnormal => "abnormal",
        }
    }
}

/// Generation knobs that the pattern tables leave open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub length: usize,
    pub noise_sigma: f64,
    pub corruption_prob: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            length: DEFAULT_LENGTH,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            corruption_prob: DEFAULT_CORRUPTION_PROB,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<usize>,
    pub set: SetId,
    pub subset: Subset,
    pub seed: u64,
}

impl SymbolStream {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// A symbol stream and its real-vector encoding (one vector per position).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub stream: SymbolStream,
    pub vectors: Vec<Vector<T>>,
    pub config: CorpusConfig,
}

impl<T: Scalar> Corpus<T> {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.stream.set.alphabet_size()
    }
}

/// An input window and its clean one-hot target window.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair<T> {
    pub x: Vec<Vector<T>>,
    pub y: Vec<Vector<T>>,
    pub start: usize,
    pub offset: usize,
}

pub fn symbol_letter(idx: usize) -> char {
    (b'A' + idx as u8) as char
}

/// Argmax letters of a sequence of vectors.
pub fn decode_string<T: Scalar>(vs: &[Vector<T>]) -> String {
    vs.iter().map(|v| symbol_letter(v.argmax())).collect()
}

pub fn symbols_to_string(symbols: &[usize]) -> String {
    symbols.iter().map(|&s| symbol_letter(s)).collect()
}

pub fn encode_symbol<T: Scalar>(idx: usize, alphabet_size: usize) -> Result<Vector<T>> {
    if idx >= alphabet_size {
        return Err(Error::InvalidInput(format!(
            "symbol index {idx} outside alphabet of size {alphabet_size}"
        )));
    }
    let mut v = Vector::zeros(alphabet_size);
    v[idx] = T::one();
    Ok(v)
}

/// Index of the largest component; ties resolve to the lowest index.
pub fn decode_argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Synchronous iff the window length and pattern length divide one another.
pub fn is_synchronous(pattern_len: usize, seq_len: usize) -> bool {
    assert!(pattern_len >= 1 && seq_len >= 1);
    seq_len % pattern_len == 0 || pattern_len % seq_len == 0
}

/// Builds a corpus with the default noise and corruption settings.
pub fn build_corpus<T: Scalar>(
    set: SetId,
    subset: Subset,
    length: usize,
    seed: u64,
) -> Result<Corpus<T>> {
    build_corpus_with(
        set,
        subset,
        seed,
        &CorpusConfig {
            length,
            ..CorpusConfig::default()
        },
    )
}

/// Builds one subset of a dataset.
///
/// * `Clear`: the pattern repeated cyclically.
/// * `Abnormal`: each position independently, with probability
///   `corruption_prob`, replaced by a uniform draw from the set's alphabet.
/// * `Noise`/`Abnoise`: the `Clear`/`Abnormal` encodings plus i.i.d.
///   Gaussian noise of standard deviation `noise_sigma` on every component.
///   A noisy vector whose argmax no longer matches its symbol is redrawn from
///   the same stream until it does, so noisy inputs stay decodable.
///
/// `Abnormal` and `Abnoise` built with the same seed share one symbol stream.
pub fn build_corpus_with<T: Scalar>(
    set: SetId,
    subset: Subset,
    seed: u64,
    config: &CorpusConfig,
) -> Result<Corpus<T>> {
    let pattern = set.pattern_symbols();
    if config.length < pattern.len() {
        return Err(Error::InvalidInput(format!(
            "corpus length {} shorter than pattern length {}",
            config.length,
            pattern.len()
        )));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(
            "noise_sigma must be finite and >= 0".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.corruption_prob) {
        return Err(Error::InvalidInput(
            "corruption_prob must lie in [0, 1]".into(),
        ));
    }
    let alphabet = set.alphabet_size();
    let mut symbols: Vec<usize> = (0..config.length)
        .map(|k| pattern[k % pattern.len()])
        .collect();

    if subset.is_abnormal() {
        let mut rng = Rng::new(derive_seed(seed, &[CORRUPT_STREAM]));
        for s in symbols.iter_mut() {
            if rng.uniform() < config.corruption_prob {
                *s = rng.below(alphabet);
            }
        }
        let changed = symbols
            .iter()
            .enumerate()
            .filter(|&(k, &s)| s != pattern[k % pattern.len()])
            .count();
        let fraction = changed as f64 / config.length as f64;
        if fraction < MIN_ABNORMAL_FRACTION {
            return Err(Error::InvalidInput(format!(
                "abnormal stream differs from the pattern at only {:.1}% of positions",
                100.0 * fraction
            )));
        }
    }

    let mut vectors: Vec<Vector<T>> = symbols
        .iter()
        .map(|&s| encode_symbol(s, alphabet))
        .collect::<Result<_>>()?;

    if subset.is_noisy() && config.noise_sigma > 0.0 {
        let mut rng = Rng::new(derive_seed(seed, &[NOISE_STREAM]));
        for (v, &s) in vectors.iter_mut().zip(&symbols) {
            loop {
                let candidate: Vector<T> = (0..alphabet)
                    .map(|k| {
                        let base = if k == s { 1.0 } else { 0.0 };
                        T::lit(base + config.noise_sigma * rng.gaussian())
                    })
                    .collect();
                if decode_argmax(&candidate) == s {
                    *v = candidate;
                    break;
                }
            }
        }
    }

    Ok(Corpus {
        stream: SymbolStream {
            symbols,
            set,
            subset,
            seed,
        },
        vectors,
        config: *config,
    })
}

/// Number of windows [`make_windows`] produces.
pub fn window_count(length: usize, seq_len: usize, stride: usize, offset: usize) -> usize {
    if seq_len + offset > length {
        0
    } else {
        (length - seq_len - offset) / stride + 1
    }
}

/// Cuts `corpus` into windows of length `seq_len` starting every `stride`
/// positions. Inputs come from the corpus vectors; targets are clean one-hot
/// encodings of the stream `offset` positions later. Windows that would run
/// past the end are dropped.
pub fn make_windows<T: Scalar>(
    corpus: &Corpus<T>,
    seq_len: usize,
    stride: usize,
    offset: usize,
) -> Vec<SequencePair<T>> {
    assert!(
        seq_len >= 1 && stride >= 1,
        "seq_len and stride must be >= 1"
    );
    let count = window_count(corpus.len(), seq_len, stride, offset);
    if count == 0 {
        log::warn!(
            "no windows: seq_len {seq_len} + offset {offset} exceeds corpus length {}",
            corpus.len()
        );
        return Vec::new();
    }
    let alphabet = corpus.alphabet_size();
    let onehots: Vec<Vector<T>> = (0..alphabet)
        .map(|k| encode_symbol(k, alphabet).expect("index in range"))
        .collect();
    (0..count)
        .map(|k| {
            let start = k * stride;
            SequencePair {
                x: corpus.vectors[start..start + seq_len].to_vec(),
                y: corpus.stream.symbols[start + offset..start + offset + seq_len]
                    .iter()
                    .map(|&s| onehots[s].clone())
                    .collect(),
                start,
                offset,
            }
        })
        .collect()
}
