//! Summary document over a run's eval artifacts, one verdict line per claim.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use redcmp::corpus::{SetId, Subset};
use redcmp::eval::mean;
use redcmp::Variant;

use crate::artifacts::{check_hash, find_hash, missing, read_text, Layout, REQUIRED_EVAL};
use crate::error::{CliError, Result};

/// Window lengths at which Model-C must separate the classes well.
pub const AUC_SEQ_LENS: [usize; 2] = [3, 8];
pub const AUC_FLOOR: f64 = 0.8;
/// Minimum Model-C minus Model-A Clear decode accuracy on Set-C at L = 8.
pub const ASYNC_GAP: f64 = 0.20;
pub const ASYNC_SEQ_LEN: usize = 8;
pub const NOISE_AGREEMENT: f64 = 0.95;

/// One evaluated cell from the eval CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub seed: u64,
    pub dataset: SetId,
    pub train_subset: Subset,
    pub seq_len: usize,
    pub variant: Variant,
    pub probe: bool,
    pub values: BTreeMap<String, f64>,
}

impl Record {
    pub fn get(&self, key: &str) -> f64 {
        self.values.get(key).copied().unwrap_or(f64::NAN)
    }

    fn tag(&self) -> String {
        format!(
            "seed{}_set{}_{}_L{}_{}",
            self.seed, self.dataset, self.train_subset, self.seq_len, self.variant
        )
    }
}

/// Parses an eval CSV (leading `#` lines are comments).
pub fn parse_records(path: &Path, text: &str) -> Result<Vec<Record>> {
    let bad = |detail: String| CliError::bad(path, detail);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for (h, v) in headers.iter().zip(row.iter()) {
            fields.insert(h, v);
        }
        let take = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing column `{k}`")))
        };
        let parse_err = |k: &str| bad(format!("bad `{k}` value"));
        let mut values = BTreeMap::new();
        for (h, v) in &fields {
            if !matches!(
                *h,
                "seed" | "dataset" | "train_subset" | "seq_len" | "variant" | "role"
            ) {
                values.insert(h.to_string(), v.parse().map_err(|_| parse_err(h))?);
            }
        }
        out.push(Record {
            seed: take("seed")?.parse().map_err(|_| parse_err("seed"))?,
            dataset: take("dataset")?.parse().map_err(|_| parse_err("dataset"))?,
            train_subset: take("train_subset")?
                .parse()
                .map_err(|_| parse_err("train_subset"))?,
            seq_len: take("seq_len")?.parse().map_err(|_| parse_err("seq_len"))?,
            variant: take("variant")?.parse().map_err(|_| parse_err("variant"))?,
            probe: take("role")? == "probe",
            values,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The run holds no cells the claim applies to.
    Skip,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub name: &'static str,
    pub scope: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl Claim {
    fn new(name: &'static str, scope: String, pass: bool, detail: String) -> Self {
        Self {
            name,
            scope,
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }

    fn skip(name: &'static str, scope: String) -> Self {
        Self {
            name,
            scope,
            verdict: Verdict::Skip,
            detail: "no matching cells".into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}  {}  {}  {}",
            self.verdict, self.name, self.scope, self.detail
        )
    }
}

/// Seeds that must agree for a per-seed claim: four in five, rounded up.
pub fn quorum(seeds: usize) -> usize {
    (4 * seeds).div_ceil(5)
}

/// The four eval tables.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub hash: String,
    pub loss: Vec<Record>,
    pub anomaly: Vec<Record>,
    pub decode: Vec<Record>,
    pub noise: Vec<Record>,
}

impl Tables {
    /// Reads the eval tables under `root`, refusing missing files and mixed hashes.
    pub fn load(root: &Path) -> Result<Self> {
        let eval = Layout::new(root).eval();
        let paths: Vec<_> = REQUIRED_EVAL.iter().map(|n| eval.join(n)).collect();
        let absent = missing(paths.clone());
        if !absent.is_empty() {
            return Err(CliError::MissingArtifacts(absent));
        }
        let texts: Vec<String> = paths.iter().map(|p| read_text(p)).collect::<Result<_>>()?;
        let hash =
            find_hash(&texts[0]).ok_or_else(|| CliError::bad(&paths[0], "no config_hash line"))?;
        for (p, t) in paths.iter().zip(&texts) {
            check_hash(p, t, &hash)?;
        }
        let mut tables = paths.iter().zip(&texts).map(|(p, t)| parse_records(p, t));
        let mut next = || tables.next().unwrap_or_else(|| Ok(Vec::new()));
        Ok(Self {
            hash,
            loss: next()?,
            anomaly: next()?,
            decode: next()?,
            noise: next()?,
        })
    }

    fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.loss.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn datasets(&self) -> Vec<SetId> {
        let mut s: Vec<SetId> = self.loss.iter().map(|r| r.dataset).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn subsets(&self) -> Vec<Subset> {
        let mut s: Vec<Subset> = self.loss.iter().map(|r| r.train_subset).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

fn fmt_variants(means: &[f64; 3]) -> String {
    format!("A={:.6} B={:.6} C={:.6}", means[0], means[1], means[2])
}

/// Model-C's mean training loss over the grid lengths is strictly below A's
/// and B's in at least [`quorum`] seeds, per (dataset, training subset).
pub fn c_lowest_claims(t: &Tables) -> Vec<Claim> {
    let seeds = t.seeds();
    let mut out = Vec::new();
    for set in t.datasets() {
        for ts in t.subsets() {
            let scope = format!("dataset={set} train_subset={ts}");
            let mut wins = 0;
            let mut counted = 0;
            let mut overall = [0.0; 3];
            for &seed in &seeds {
                let per_variant: Vec<Vec<f64>> = [Variant::A, Variant::B, Variant::C]
                    .iter()
                    .map(|&v| {
                        t.loss
                            .iter()
                            .filter(|r| {
                                !r.probe
                                    && r.seed == seed
                                    && r.dataset == set
                                    && r.train_subset == ts
                                    && r.variant == v
                            })
                            .map(|r| r.get("train_loss"))
                            .collect()
                    })
                    .collect();
                if per_variant.iter().any(Vec::is_empty) {
                    continue;
                }
                let m: Vec<f64> = per_variant.iter().map(|v| mean(v)).collect();
                counted += 1;
                for k in 0..3 {
                    overall[k] += m[k] / seeds.len() as f64;
                }
                if m[2] < m[0] && m[2] < m[1] {
                    wins += 1;
                }
            }
            if counted == 0 {
                out.push(Claim::skip("c_lowest_training_loss", scope));
                continue;
            }
            let need = quorum(counted);
            out.push(Claim::new(
                "c_lowest_training_loss",
                scope,
                wins >= need,
                format!(
                    "seeds {wins}/{counted} (need {need}); mean {}",
                    fmt_variants(&overall)
                ),
            ));
        }
    }
    out
}

/// Mean Abnormal loss exceeds mean Normal loss in every cell.
pub fn separation_claim(t: &Tables) -> Claim {
    let scope = "all cells".to_string();
    if t.anomaly.is_empty() {
        return Claim::skip("abnormal_above_normal", scope);
    }
    let failing: Vec<String> = t
        .anomaly
        .iter()
        .filter(|r| !(r.get("abnormal_loss") > r.get("normal_loss")))
        .map(Record::tag)
        .collect();
    let mut detail = format!(
        "{}/{} cells separated",
        t.anomaly.len() - failing.len(),
        t.anomaly.len()
    );
    if !failing.is_empty() {
        let _ = write!(detail, "; failing: {}", failing.join(" "));
    }
    Claim::new("abnormal_above_normal", scope, failing.is_empty(), detail)
}

/// Model-C AUC exceeds [`AUC_FLOOR`] at every L in [`AUC_SEQ_LENS`], per dataset.
pub fn auc_claims(t: &Tables) -> Vec<Claim> {
    let mut out = Vec::new();
    for set in t.datasets() {
        let lens = AUC_SEQ_LENS.map(|l| l.to_string()).join(",");
        let scope = format!("dataset={set} model=C L={lens}");
        let cells: Vec<&Record> = t
            .anomaly
            .iter()
            .filter(|r| {
                r.dataset == set && r.variant == Variant::C && AUC_SEQ_LENS.contains(&r.seq_len)
            })
            .collect();
        let covered = AUC_SEQ_LENS
            .iter()
            .all(|l| cells.iter().any(|r| r.seq_len == *l));
        if !covered {
            out.push(Claim::skip("model_c_auc", scope));
            continue;
        }
        let worst = cells
            .iter()
            .min_by(|a, b| a.get("auc").total_cmp(&b.get("auc")))
            .copied();
        let below = cells.iter().filter(|r| !(r.get("auc") > AUC_FLOOR)).count();
        let detail = match worst {
            Some(w) => format!(
                "{}/{} cells above {AUC_FLOOR}; min {:.4} at {}",
                cells.len() - below,
                cells.len(),
                w.get("auc"),
                w.tag()
            ),
            None => String::new(),
        };
        out.push(Claim::new("model_c_auc", scope, below == 0, detail));
    }
    out
}

/// On Set-C at L = 8 with Clear training, Model-C's Clear decode accuracy
/// beats Model-A's by [`ASYNC_GAP`] in at least [`quorum`] seeds.
pub fn async_claim(t: &Tables) -> Claim {
    let scope = format!("dataset=C L={ASYNC_SEQ_LEN} train_subset=clear");
    let acc = |seed: u64, v: Variant| {
        t.decode
            .iter()
            .find(|r| {
                r.seed == seed
                    && r.dataset == SetId::C
                    && r.seq_len == ASYNC_SEQ_LEN
                    && r.train_subset == Subset::Clear
                    && r.variant == v
            })
            .map(|r| r.get("clear_accuracy"))
    };
    let gaps: Vec<f64> = t
        .seeds()
        .into_iter()
        .filter_map(|s| Some(acc(s, Variant::C)? - acc(s, Variant::A)?))
        .collect();
    if gaps.is_empty() {
        return Claim::skip("set_c_async_model_a_gap", scope);
    }
    let wins = gaps.iter().filter(|&&g| g >= ASYNC_GAP).count();
    let need = quorum(gaps.len());
    let listed: Vec<String> = gaps.iter().map(|g| format!("{g:+.4}")).collect();
    Claim::new(
        "set_c_async_model_a_gap",
        scope,
        wins >= need,
        format!(
            "seeds {wins}/{} (need {need}); C-A accuracy gaps {}",
            gaps.len(),
            listed.join(" ")
        ),
    )
}

/// Model-C trained on Noise decodes Clear and Noise windows identically on
/// at least [`NOISE_AGREEMENT`] of all compared windows.
pub fn noise_claim(t: &Tables) -> Claim {
    let scope = "model=C train_subset=noise".to_string();
    let cells: Vec<&Record> = t
        .noise
        .iter()
        .filter(|r| r.variant == Variant::C && r.train_subset == Subset::Noise)
        .collect();
    let windows: f64 = cells.iter().map(|r| r.get("windows")).sum();
    let identical: f64 = cells.iter().map(|r| r.get("identical")).sum();
    if cells.is_empty() || windows == 0.0 {
        return Claim::skip("noise_robustness", scope);
    }
    let fraction = identical / windows;
    let worst = cells
        .iter()
        .min_by(|a, b| a.get("fraction").total_cmp(&b.get("fraction")))
        .copied();
    let detail = format!(
        "{identical}/{windows} windows identical ({fraction:.4}, need {NOISE_AGREEMENT}); worst cell {:.4} at {}",
        worst.map_or(f64::NAN, |w| w.get("fraction")),
        worst.map_or(String::new(), Record::tag)
    );
    Claim::new(
        "noise_robustness",
        scope,
        fraction >= NOISE_AGREEMENT,
        detail,
    )
}

pub fn all_claims(t: &Tables) -> Vec<Claim> {
    let mut out = c_lowest_claims(t);
    out.push(separation_claim(t));
    out.extend(auc_claims(t));
    out.push(async_claim(t));
    out.push(noise_claim(t));
    out
}

pub fn render(t: &Tables, claims: &[Claim]) -> String {
    let mut out = String::from("redcmp run report\n");
    let _ = writeln!(out, "config_hash: {}", t.hash);
    let _ = writeln!(out, "cells: {}", t.loss.len());
    out.push('\n');
    for c in claims {
        out.push_str(&c.line());
        out.push('\n');
    }
    let passed = claims.iter().filter(|c| c.verdict == Verdict::Pass).count();
    let failed = claims.iter().filter(|c| c.verdict == Verdict::Fail).count();
    let _ = writeln!(
        out,
        "\n{passed} passed, {failed} failed, {} skipped",
        claims.len() - passed - failed
    );
    out
}

/// Builds the report for the run under `root` and writes `report.txt`.
pub fn write_report(root: &Path) -> Result<(String, Vec<Claim>)> {
    let tables = Tables::load(root)?;
    let claims = all_claims(&tables);
    let text = render(&tables, &claims);
    crate::artifacts::write_text(&Layout::new(root).report(), &text)?;
    Ok((text, claims))
}
