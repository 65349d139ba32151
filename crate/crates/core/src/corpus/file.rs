//! On-disk corpus format: a `key: value` metadata file and a data file with
//! one comma-separated row per position (symbol index, then the vector).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{decode_argmax, Corpus, CorpusConfig, SetId, Subset, SymbolStream};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Vector};

pub const FORMAT_VERSION: u32 = 1;

pub fn meta_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.meta"))
}

pub fn data_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.data"))
}

/// Conventional file stem, e.g. `setA_clear_seed42`.
pub fn default_stem(set: SetId, subset: Subset, seed: u64) -> String {
    format!("set{set}_{subset}_seed{seed}")
}

/// Writes `<stem>.meta` and `<stem>.data` under `dir`. `extra` entries are
/// appended to the metadata after the standard keys.
pub fn write_corpus<T: Scalar>(
    dir: &Path,
    stem: &str,
    corpus: &Corpus<T>,
    extra: &[(&str, String)],
) -> Result<(PathBuf, PathBuf)> {
    let meta = meta_path(dir, stem);
    let data = data_path(dir, stem);
    let mut m = String::new();
    m.push_str(&format!("format_version: {FORMAT_VERSION}\n"));
    m.push_str(&format!("set: {}\n", corpus.stream.set));
    m.push_str(&format!("subset: {}\n", corpus.stream.subset));
    m.push_str(&format!("seed: {}\n", corpus.stream.seed));
    m.push_str(&format!("length: {}\n", corpus.len()));
    m.push_str(&format!("alphabet_size: {}\n", corpus.alphabet_size()));
    m.push_str(&format!("noise_sigma: {}\n", corpus.config.noise_sigma));
    m.push_str(&format!(
        "corruption_prob: {}\n",
        corpus.config.corruption_prob
    ));
    for (k, v) in extra {
        m.push_str(&format!("{k}: {v}\n"));
    }
    fs::write(&meta, m)?;

    let mut w = BufWriter::new(fs::File::create(&data)?);
    for (s, v) in corpus.stream.symbols.iter().zip(&corpus.vectors) {
        write!(w, "{s}")?;
        for x in v.iter() {
            write!(w, ",{x}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok((meta, data))
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key: value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn field<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Parse(format!("metadata missing `{key}`")))
}

fn parse_num<N: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<N> {
    field(meta, key)?
        .parse()
        .map_err(|_| Error::Parse(format!("metadata `{key}` is not a valid number")))
}

/// Reads the corpus whose metadata lives at `<stem>.meta`.
pub fn read_corpus<T: Scalar>(dir: &Path, stem: &str) -> Result<Corpus<T>> {
    let meta = parse_key_values(&fs::read_to_string(meta_path(dir, stem))?)?;
    let version = field(&meta, "format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version {
            found: version.to_string(),
            expected: FORMAT_VERSION,
        });
    }
    let set: SetId = field(&meta, "set")?.parse()?;
    let subset: Subset = field(&meta, "subset")?.parse()?;
    let seed: u64 = parse_num(&meta, "seed")?;
    let length: usize = parse_num(&meta, "length")?;
    let alphabet: usize = parse_num(&meta, "alphabet_size")?;
    if alphabet != set.alphabet_size() {
        return Err(Error::Parse(format!(
            "alphabet_size {alphabet} does not match set {set}"
        )));
    }
    let config = CorpusConfig {
        length,
        noise_sigma: parse_num(&meta, "noise_sigma")?,
        corruption_prob: parse_num(&meta, "corruption_prob")?,
    };

    let text = fs::read_to_string(data_path(dir, stem))?;
    let mut symbols = Vec::with_capacity(length);
    let mut vectors = Vec::with_capacity(length);
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split(',');
        let sym: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("data row {}: bad symbol index", n + 1)))?;
        let v: Vector<T> = parts
            .map(|s| s.parse::<T>())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| Error::Parse(format!("data row {}: {e}", n + 1)))?
            .into();
        if v.len() != alphabet || sym >= alphabet {
            return Err(Error::Parse(format!(
                "data row {}: wrong width or symbol",
                n + 1
            )));
        }
        if !v.is_finite() || decode_argmax(&v) != sym {
            return Err(Error::Parse(format!(
                "data row {}: vector does not decode to its symbol",
                n + 1
            )));
        }
        symbols.push(sym);
        vectors.push(v);
    }
    if symbols.len() != length {
        return Err(Error::Parse(format!(
            "data file has {} rows, metadata says {length}",
            symbols.len()
        )));
    }
    Ok(Corpus {
        stream: SymbolStream {
            symbols,
            set,
            subset,
            seed,
        },
        vectors,
        config,
    })
}
