//! Loss matrices, anomaly scoring with a calibrated threshold, and decoded
//! sequence reports.

use std::fmt::Write as _;

use crate::batched::BatchEngine;
use crate::corpus::{
    decode_string, make_windows, symbols_to_string, Class, Corpus, SequencePair, SetId, Subset,
};
use crate::error::{Error, Result};
use crate::numerics::Scalar;
use crate::red::{red_loss, RedModel, Variant};

/// Per-window loss. Used directly as the anomaly score.
pub fn window_losses<T: Scalar>(
    model: &RedModel<T>,
    pairs: &[SequencePair<T>],
) -> Result<Vec<f64>> {
    Ok(evaluate_windows(model, pairs)?
        .into_iter()
        .map(|(l, _)| l)
        .collect())
}

pub use window_losses as anomaly_scores;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Loss and decoded symbols of every window, computed in batches.
pub fn evaluate_windows<T: Scalar>(
    model: &RedModel<T>,
    pairs: &[SequencePair<T>],
) -> Result<Vec<(f64, Vec<usize>)>> {
    const CHUNK: usize = 64;
    let mut engine = BatchEngine::new(model);
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let refs: Vec<&SequencePair<T>> = chunk.iter().collect();
        out.extend(
            engine
                .evaluate(&refs)?
                .into_iter()
                .map(|(l, d)| (l.as_f64(), d)),
        );
    }
    Ok(out)
}

/// Argmax output string for each window.
pub fn decoded_outputs<T: Scalar>(
    model: &RedModel<T>,
    pairs: &[SequencePair<T>],
) -> Result<Vec<String>> {
    Ok(evaluate_windows(model, pairs)?
        .into_iter()
        .map(|(_, d)| symbols_to_string(&d))
        .collect())
}

/// Fraction of output symbols whose argmax equals the target's.
pub fn decode_accuracy<T: Scalar>(model: &RedModel<T>, pairs: &[SequencePair<T>]) -> Result<f64> {
    let decoded = evaluate_windows(model, pairs)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((_, d), p) in decoded.iter().zip(pairs) {
        for (&s, y) in d.iter().zip(&p.y) {
            hits += usize::from(s == y.argmax());
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput(
            "decode accuracy over zero windows".into(),
        ));
    }
    Ok(hits as f64 / total as f64)
}

/// Windows of `corpus` matched to `model`'s length and target offset.
/// `stride = None` means non-overlapping windows (stride = L).
pub fn windows_for<T: Scalar>(
    model: &RedModel<T>,
    corpus: &Corpus<T>,
    stride: Option<usize>,
) -> Vec<SequencePair<T>> {
    let l = model.seq_len;
    make_windows(corpus, l, stride.unwrap_or(l), model.target_offset())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub dataset: SetId,
    /// Subset name for training-set rows, class name for test rows.
    pub class: String,
    /// Mean window loss for Model-A, B and C.
    pub cells: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossMatrix {
    pub rows: Vec<LossRow>,
}

pub const LOSS_MATRIX_HEADER: &str = "dataset,class,model_a,model_b,model_c";

impl LossMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOSS_MATRIX_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.dataset, r.class, r.cells[0], r.cells[1], r.cells[2]
            );
        }
        out
    }

    pub fn row(&self, dataset: SetId, class: &str) -> Option<&LossRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.class == class)
    }
}

/// Which windows a loss matrix is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixSplit {
    /// The training subset itself; one row per dataset.
    Train(Subset),
    /// Test corpora pooled by class; a normal and an abnormal row per dataset.
    Test,
}

/// The three trained variants for one dataset plus the corpora to score.
pub struct DatasetEval<'a, T> {
    pub set: SetId,
    /// Indexed by [`Variant::index`].
    pub models: [&'a RedModel<T>; 3],
    pub corpora: &'a [Corpus<T>],
}

/// Mean window loss per (dataset, subset or class) and variant. Every model is
/// scored on windows cut with its own target offset.
pub fn evaluate_loss_matrix<T: Scalar>(
    entries: &[DatasetEval<'_, T>],
    split: MatrixSplit,
    stride: Option<usize>,
) -> Result<LossMatrix> {
    let mut rows = Vec::new();
    for e in entries {
        for (k, m) in e.models.iter().enumerate() {
            if m.variant != Variant::ALL[k] {
                return Err(Error::InvalidInput(format!(
                    "model slot {} holds variant {}",
                    Variant::ALL[k],
                    m.variant
                )));
            }
        }
        let groups: Vec<(String, Vec<&Corpus<T>>)> = match split {
            MatrixSplit::Train(subset) => vec![(
                subset.name().to_string(),
                e.corpora
                    .iter()
                    .filter(|c| c.stream.subset == subset)
                    .collect(),
            )],
            MatrixSplit::Test => [Class::Normal, Class::Abnormal]
                .into_iter()
                .map(|class| {
                    (
                        class.name().to_string(),
                        e.corpora
                            .iter()
                            .filter(|c| c.stream.subset.class() == class)
                            .collect(),
                    )
                })
                .collect(),
        };
        for (class, corpora) in groups {
            if corpora.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no corpus for set {} row {class}",
                    e.set
                )));
            }
            let mut cells = [0.0; 3];
            for (k, m) in e.models.iter().enumerate() {
                let mut losses = Vec::new();
                for c in &corpora {
                    losses.extend(window_losses(m, &windows_for(m, c, stride))?);
                }
                cells[k] = mean(&losses);
            }
            rows.push(LossRow {
                dataset: e.set,
                class,
                cells,
            });
        }
    }
    Ok(LossMatrix { rows })
}

/// Nearest-rank percentile, `percentile ∈ (0, 100]`.
pub fn calibrate_threshold(train_scores: &[f64], percentile: f64) -> Result<f64> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidInput(format!(
            "percentile {percentile} outside (0, 100]"
        )));
    }
    if train_scores.is_empty() || train_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(
            "threshold calibration needs finite training scores".into(),
        ));
    }
    let mut sorted = train_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Area under the ROC curve by the rank statistic (average ranks for ties),
/// treating `Abnormal` as the positive class. `None` if one class is absent.
pub fn auc(scores: &[f64], labels: &[Class]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == Class::Abnormal).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] == Class::Abnormal {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub threshold: f64,
    pub scores: Vec<f64>,
    pub labels: Vec<Class>,
    pub flagged: Vec<bool>,
    pub mean_normal: f64,
    pub mean_abnormal: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// Flags windows scoring strictly above `threshold` as abnormal and scores
/// the flags against `labels`. Precision (recall) is 0 when nothing is
/// flagged (no abnormal windows exist).
pub fn classify(scores: &[f64], threshold: f64, labels: &[Class]) -> Result<AnomalyReport> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "classify: labels vs scores",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if !threshold.is_finite() {
        return Err(Error::NonFinite(format!("threshold {threshold}")));
    }
    let flagged: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&f, &l) in flagged.iter().zip(labels) {
        match (f, l) {
            (true, Class::Abnormal) => tp += 1,
            (true, Class::Normal) => fp += 1,
            (false, Class::Normal) => tn += 1,
            (false, Class::Abnormal) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let class_mean = |class: Class| {
        let v: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(&s, _)| s)
            .collect();
        mean(&v)
    };
    Ok(AnomalyReport {
        threshold,
        scores: scores.to_vec(),
        labels: labels.to_vec(),
        flagged,
        mean_normal: class_mean(Class::Normal),
        mean_abnormal: class_mean(Class::Abnormal),
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fn_,
        precision,
        recall,
        f1,
        auc: auc(scores, labels),
    })
}

impl AnomalyReport {
    /// Flat `key: value` block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "threshold: {}", self.threshold);
        let _ = writeln!(out, "windows: {}", self.scores.len());
        let _ = writeln!(out, "mean_normal: {}", self.mean_normal);
        let _ = writeln!(out, "mean_abnormal: {}", self.mean_abnormal);
        let _ = writeln!(out, "true_pos: {}", self.true_pos);
        let _ = writeln!(out, "false_pos: {}", self.false_pos);
        let _ = writeln!(out, "true_neg: {}", self.true_neg);
        let _ = writeln!(out, "false_neg: {}", self.false_neg);
        let _ = writeln!(out, "precision: {}", self.precision);
        let _ = writeln!(out, "recall: {}", self.recall);
        let _ = writeln!(out, "f1: {}", self.f1);
        match self.auc {
            Some(a) => {
                let _ = writeln!(out, "auc: {a}");
            }
            None => out.push_str("auc: absent\n"),
        }
        out
    }

    /// `window,class,score,flagged` CSV.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("window,class,score,flagged\n");
        for (k, ((s, l), f)) in self
            .scores
            .iter()
            .zip(&self.labels)
            .zip(&self.flagged)
            .enumerate()
        {
            let _ = writeln!(out, "{k},{},{s},{}", l.name(), u8::from(*f));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRow {
    pub variant: Variant,
    pub subset: Subset,
    pub input: String,
    pub output: String,
    pub ground_truth: String,
    pub loss: f64,
}

/// The first `n_samples` windows of each subset, decoded to letters.
pub fn decode_report<T: Scalar>(
    model: &RedModel<T>,
    samples: &[(Subset, &[SequencePair<T>])],
    n_samples: usize,
) -> Result<Vec<DecodeRow>> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for (subset, pairs) in samples {
        for p in pairs.iter().take(n_samples) {
            let trace = model.forward(&p.x)?;
            rows.push(DecodeRow {
                variant: model.variant,
                subset: *subset,
                input: decode_string(&p.x),
                output: decode_string(&trace.probs),
                ground_truth: decode_string(&p.y),
                loss: red_loss(&trace, &p.y)?.as_f64(),
            });
        }
    }
    Ok(rows)
}

/// Renders rows as an aligned text table with columns
/// Model, Subset, Input, Output, Ground-Truth, Loss.
pub fn format_decode_table(rows: &[DecodeRow]) -> String {
    let width = |f: &dyn Fn(&DecodeRow) -> usize, header: &str| {
        rows.iter().map(f).max().unwrap_or(0).max(header.len())
    };
    let wi = width(&|r| r.input.len(), "Input");
    let wo = width(&|r| r.output.len(), "Output");
    let wg = width(&|r| r.ground_truth.len(), "Ground-Truth");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}  {:<8}  {:<wi$}  {:<wo$}  {:<wg$}  {:>6}",
        "Model", "Subset", "Input", "Output", "Ground-Truth", "Loss"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<8}  {:<8}  {:<wi$}  {:<wo$}  {:<wg$}  {:>6.3}",
            format!("Model-{}", r.variant),
            r.subset.title(),
            r.input,
            r.output,
            r.ground_truth,
            r.loss
        );
    }
    out
}
