//! The gen, train and eval stages over a run directory.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use redcmp::corpus::file::{data_path, default_stem, meta_path, read_corpus, write_corpus};
use redcmp::corpus::{build_corpus_with, decode_argmax, SetId, Subset};
use redcmp::eval::{
    calibrate_threshold, classify, decode_report, evaluate_windows, format_decode_table, mean,
    windows_for, LossMatrix, LossRow,
};
use redcmp::train::{train, HyperParams, TrainError};
use redcmp::{Corpus, RedModel, Rng, SequencePair, Variant};

use crate::artifacts::{
    create_dir, failed_path, find_hash, hash_comment, missing, read_text, remove_if_present,
    write_text, Layout, HASH_KEY,
};
use crate::checkpoint::Checkpoint;
use crate::config::{Cell, RunConfig};
use crate::error::{CliError, Result};
use crate::svg::loss_curve_svg;

type CorpusKey = (u64, SetId, Subset);

/// A validated config bound to an output directory and worker count.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    pub layout: Layout,
    pub jobs: usize,
    hash: String,
}

/// Evaluation results of one trained cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEval {
    pub cell: Cell,
    pub train_loss: f64,
    pub normal_loss: f64,
    pub abnormal_loss: f64,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Symbol-level argmax accuracy on Clear and Noise test windows.
    pub clear_accuracy: f64,
    pub noise_accuracy: f64,
    /// Clear/Noise window pairs compared, and how many decoded identically.
    pub windows: usize,
    pub identical: usize,
}

const CELL_COLUMNS: &str = "seed,dataset,train_subset,seq_len,variant,role";

fn cell_prefix(c: &Cell) -> String {
    format!(
        "{},{},{},{},{},{}",
        c.seed,
        c.set,
        c.train_subset,
        c.seq_len,
        c.variant,
        c.role()
    )
}

impl Pipeline {
    pub fn new(config: RunConfig, root: impl Into<PathBuf>, jobs: usize) -> Result<Self> {
        config.validate()?;
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        let hash = config.hash();
        Ok(Self {
            config,
            layout: Layout::new(root),
            jobs,
            hash,
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", self.jobs)))
    }

    pub fn write_config(&self) -> Result<()> {
        let text = hash_comment(&self.hash) + &self.config.to_text();
        write_text(&self.layout.config(), &text)
    }

    fn stem(&self, (seed, set, subset): CorpusKey) -> String {
        default_stem(set, subset, seed)
    }

    /// Generates every (seed, set, subset) corpus; empty filters mean all.
    pub fn gen(&self, sets: &[SetId], subsets: &[Subset]) -> Result<Vec<PathBuf>> {
        let sets = if sets.is_empty() {
            &self.config.datasets[..]
        } else {
            sets
        };
        let subsets = if subsets.is_empty() {
            &Subset::ALL[..]
        } else {
            subsets
        };
        let dir = self.layout.corpora();
        create_dir(&dir)?;
        self.write_config()?;
        let mut written = Vec::new();
        for &seed in &self.config.seeds {
            for &set in sets {
                for &subset in subsets {
                    let corpus: Corpus = build_corpus_with(set, subset, seed, &self.config.corpus)?;
                    let stem = self.stem((seed, set, subset));
                    let paths =
                        write_corpus(&dir, &stem, &corpus, &[(HASH_KEY, self.hash.clone())])
                            .map_err(|e| match e {
                                redcmp::Error::Io(source) => CliError::Unwritable {
                                    path: meta_path(&dir, &stem),
                                    source,
                                },
                                other => other.into(),
                            })?;
                    log::info!("wrote {}", paths.1.display());
                    written.push(paths.1);
                }
            }
        }
        Ok(written)
    }

    fn load_corpora(&self, keys: &[CorpusKey]) -> Result<BTreeMap<CorpusKey, Corpus>> {
        let dir = self.layout.corpora();
        let absent = missing(keys.iter().flat_map(|&k| {
            let stem = self.stem(k);
            [meta_path(&dir, &stem), data_path(&dir, &stem)]
        }));
        if !absent.is_empty() {
            return Err(CliError::MissingArtifacts(absent));
        }
        let mut out = BTreeMap::new();
        for &k in keys {
            let stem = self.stem(k);
            let meta = meta_path(&dir, &stem);
            let corpus: Corpus =
                read_corpus(&dir, &stem).map_err(|e| CliError::bad(&meta, e.to_string()))?;
            // Corpora depend only on the generation settings, so a run may
            // reuse them under a config that differs elsewhere.
            if corpus.config != self.config.corpus {
                return Err(CliError::MixedConfig {
                    path: meta.clone(),
                    found: find_hash(&read_text(&meta)?).unwrap_or_else(|| "unknown".into()),
                    expected: self.hash.clone(),
                });
            }
            out.insert(k, corpus);
        }
        Ok(out)
    }

    fn corpus_keys(&self, subsets: &[Subset]) -> Vec<CorpusKey> {
        let mut keys = Vec::new();
        for &seed in &self.config.seeds {
            for &set in &self.config.datasets {
                for &subset in subsets {
                    keys.push((seed, set, subset));
                }
            }
        }
        keys
    }

    fn init_model(&self, cell: &Cell) -> RedModel {
        RedModel::init(
            cell.set.alphabet_size(),
            self.config.hidden_dim,
            cell.seq_len,
            cell.variant,
            &mut Rng::new(cell.init_seed()),
        )
    }

    /// Trains every cell. Diverged cells leave `.failed` artifacts and make
    /// the stage fail once all other cells are done.
    pub fn train(&self) -> Result<()> {
        let corpora = self.load_corpora(&self.corpus_keys(&self.config.train_subsets))?;
        self.write_config()?;
        let cells = self.config.cells();
        let outcomes: Vec<Result<Option<String>>> = self.pool()?.install(|| {
            cells
                .par_iter()
                .map(|cell| {
                    self.train_cell(cell, &corpora[&(cell.seed, cell.set, cell.train_subset)])
                })
                .collect()
        });
        let mut diverged = Vec::new();
        for o in outcomes {
            if let Some(tag) = o? {
                diverged.push(tag);
            }
        }
        if diverged.is_empty() {
            Ok(())
        } else {
            Err(CliError::Diverged(diverged))
        }
    }

    fn train_cell(&self, cell: &Cell, corpus: &Corpus) -> Result<Option<String>> {
        let started = Instant::now();
        let model = self.init_model(cell);
        let pairs = windows_for(&model, corpus, self.config.stride);
        let hyper = HyperParams {
            seed: cell.shuffle_seed(),
            ..self.config.hyper
        };
        let paths = [
            self.layout.checkpoint(cell),
            self.layout.curve_csv(cell),
            self.layout.curve_svg(cell),
        ];
        let (model, curve, failed) = match train(model, &pairs, &hyper) {
            Ok((m, c)) => (m, c, false),
            Err(TrainError::Diverged {
                epoch,
                reason,
                last_good,
                curve,
            }) => {
                log::warn!("{} diverged in epoch {}: {reason}", cell.tag(), epoch + 1);
                (*last_good, curve, true)
            }
            Err(TrainError::Invalid(e)) => return Err(e.into()),
        };
        let ckpt = Checkpoint {
            model,
            dataset: cell.set,
            train_subset: cell.train_subset,
            run_seed: cell.seed,
            init_seed: cell.init_seed(),
            shuffle_seed: cell.shuffle_seed(),
            epochs_completed: curve.losses.len(),
            final_loss: curve.final_loss(),
            config_hash: self.hash.clone(),
        };
        let csv = hash_comment(&self.hash) + &curve.to_csv();
        let svg = loss_curve_svg(&cell.tag(), &curve.losses, &self.hash);
        let (keep, stale): (Vec<PathBuf>, Vec<PathBuf>) = if failed {
            (
                paths.iter().map(|p| failed_path(p)).collect(),
                paths.to_vec(),
            )
        } else {
            (
                paths.to_vec(),
                paths.iter().map(|p| failed_path(p)).collect(),
            )
        };
        for p in &stale {
            remove_if_present(p)?;
        }
        write_text(&keep[0], &ckpt.to_text())?;
        write_text(&keep[1], &csv)?;
        write_text(&keep[2], &svg)?;
        log::info!(
            "trained {} ({} windows): final loss {} in {:.1}s",
            cell.tag(),
            pairs.len(),
            ckpt.final_loss.map_or("none".into(), |l| format!("{l:.5}")),
            started.elapsed().as_secs_f64()
        );
        Ok(failed.then(|| cell.tag()))
    }

    /// Loads the checkpoint for `cell` and checks it against the config.
    pub fn load_checkpoint(&self, cell: &Cell) -> Result<Checkpoint> {
        let path = self.layout.checkpoint(cell);
        let ckpt = Checkpoint::load(&path)?;
        let m = &ckpt.model;
        let expected = (
            cell.variant,
            cell.set.alphabet_size(),
            self.config.hidden_dim,
            cell.seq_len,
        );
        let found = (m.variant, m.alphabet_size, m.hidden_dim(), m.seq_len);
        if found != expected {
            return Err(CliError::DimensionMismatch {
                path,
                detail: format!(
                    "variant/alphabet/hidden/L = {}/{}/{}/{}, expected {}/{}/{}/{}",
                    found.0,
                    found.1,
                    found.2,
                    found.3,
                    expected.0,
                    expected.1,
                    expected.2,
                    expected.3
                ),
            });
        }
        if ckpt.config_hash != self.hash {
            return Err(CliError::MixedConfig {
                path,
                found: ckpt.config_hash,
                expected: self.hash.clone(),
            });
        }
        Ok(ckpt)
    }

    /// Scores every checkpoint on all four subsets and writes the eval tree.
    pub fn eval(&self) -> Result<Vec<CellEval>> {
        let cells = self.config.cells();
        let absent = missing(cells.iter().map(|c| self.layout.checkpoint(c)));
        if !absent.is_empty() {
            return Err(CliError::MissingArtifacts(absent));
        }
        let corpora = self.load_corpora(&self.corpus_keys(&Subset::ALL))?;
        // Dimension and hash problems surface before anything is written.
        let checkpoints: Vec<Checkpoint> = cells
            .iter()
            .map(|c| self.load_checkpoint(c))
            .collect::<Result<_>>()?;
        create_dir(&self.layout.eval())?;
        self.write_config()?;
        let results: Vec<Result<CellEval>> = self.pool()?.install(|| {
            cells
                .par_iter()
                .zip(&checkpoints)
                .map(|(cell, ckpt)| {
                    let sets: Vec<&Corpus> = Subset::ALL
                        .iter()
                        .map(|&s| &corpora[&(cell.seed, cell.set, s)])
                        .collect();
                    self.eval_cell(cell, &ckpt.model, &sets)
                })
                .collect()
        });
        let evals: Vec<CellEval> = results.into_iter().collect::<Result<_>>()?;
        self.write_summaries(&evals)?;
        Ok(evals)
    }

    /// `corpora` holds the four subsets in [`Subset::ALL`] order.
    fn eval_cell(&self, cell: &Cell, model: &RedModel, corpora: &[&Corpus]) -> Result<CellEval> {
        let windows: Vec<Vec<SequencePair>> = corpora
            .iter()
            .map(|c| windows_for(model, c, self.config.stride))
            .collect();
        let outputs: Vec<Vec<(f64, Vec<usize>)>> = windows
            .iter()
            .map(|w| evaluate_windows(model, w))
            .collect::<redcmp::Result<_>>()?;
        let at = |s: Subset| Subset::ALL.iter().position(|&x| x == s).unwrap_or(0);

        let train_scores: Vec<f64> = outputs[at(cell.train_subset)].iter().map(|o| o.0).collect();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (subset, out) in Subset::ALL.iter().zip(&outputs) {
            scores.extend(out.iter().map(|o| o.0));
            labels.extend(std::iter::repeat(subset.class()).take(out.len()));
        }
        let threshold = calibrate_threshold(&train_scores, self.config.threshold_percentile)?;
        let report = classify(&scores, threshold, &labels)?;

        let accuracy = |k: usize| {
            let (mut hits, mut total) = (0usize, 0usize);
            for (pair, (_, decoded)) in windows[k].iter().zip(&outputs[k]) {
                for (y, &d) in pair.y.iter().zip(decoded) {
                    hits += usize::from(decode_argmax(&y[..]) == d);
                    total += 1;
                }
            }
            hits as f64 / total.max(1) as f64
        };
        let (clear, noise) = (at(Subset::Clear), at(Subset::Noise));
        let identical = outputs[clear]
            .iter()
            .zip(&outputs[noise])
            .filter(|(a, b)| a.1 == b.1)
            .count();
        let compared = outputs[clear].len().min(outputs[noise].len());

        let samples: Vec<(Subset, &[SequencePair])> = Subset::ALL
            .iter()
            .zip(&windows)
            .map(|(&s, w)| (s, &w[..]))
            .collect();
        let rows = decode_report(model, &samples, self.config.decode_samples)?;
        write_text(
            &self.layout.decode_txt(cell),
            &(hash_comment(&self.hash) + &format_decode_table(&rows)),
        )?;
        write_text(
            &self.layout.anomaly_txt(cell),
            &format!("{HASH_KEY}: {}\n{}", self.hash, report.to_text()),
        )?;
        write_text(
            &self.layout.anomaly_scores(cell),
            &(hash_comment(&self.hash) + &report.scores_csv()),
        )?;

        Ok(CellEval {
            cell: *cell,
            train_loss: mean(&train_scores),
            normal_loss: report.mean_normal,
            abnormal_loss: report.mean_abnormal,
            threshold,
            auc: report.auc,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            clear_accuracy: accuracy(clear),
            noise_accuracy: accuracy(noise),
            windows: compared,
            identical,
        })
    }

    fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut text = hash_comment(&self.hash);
        text.push_str(header);
        text.push('\n');
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        write_text(&self.layout.eval().join(name), &text)
    }

    fn write_summaries(&self, evals: &[CellEval]) -> Result<()> {
        let rows = |f: &dyn Fn(&CellEval) -> String| -> Vec<String> {
            evals
                .iter()
                .map(|e| format!("{},{}", cell_prefix(&e.cell), f(e)))
                .collect()
        };
        self.write_csv(
            "loss_cells.csv",
            &format!("{CELL_COLUMNS},train_loss,normal_loss,abnormal_loss"),
            &rows(&|e| format!("{},{},{}", e.train_loss, e.normal_loss, e.abnormal_loss)),
        )?;
        self.write_csv(
            "anomaly_summary.csv",
            &format!("{CELL_COLUMNS},threshold,auc,precision,recall,f1,normal_loss,abnormal_loss"),
            &rows(&|e| {
                format!(
                    "{},{},{},{},{},{},{}",
                    e.threshold,
                    e.auc.unwrap_or(f64::NAN),
                    e.precision,
                    e.recall,
                    e.f1,
                    e.normal_loss,
                    e.abnormal_loss
                )
            }),
        )?;
        self.write_csv(
            "decode_accuracy.csv",
            &format!("{CELL_COLUMNS},clear_accuracy,noise_accuracy"),
            &rows(&|e| format!("{},{}", e.clear_accuracy, e.noise_accuracy)),
        )?;
        self.write_csv(
            "noise_robustness.csv",
            &format!("{CELL_COLUMNS},windows,identical,fraction"),
            &rows(&|e| {
                format!(
                    "{},{},{}",
                    e.windows,
                    e.identical,
                    e.identical as f64 / e.windows.max(1) as f64
                )
            }),
        )?;
        for &ts in &self.config.train_subsets {
            let (train_m, test_m) = self.loss_matrices(evals, ts);
            let eval = self.layout.eval();
            write_text(
                &eval.join(format!("loss_train_{ts}.csv")),
                &(hash_comment(&self.hash) + &train_m.to_csv()),
            )?;
            write_text(
                &eval.join(format!("loss_test_{ts}.csv")),
                &(hash_comment(&self.hash) + &test_m.to_csv()),
            )?;
        }
        Ok(())
    }

    /// Training-set and test-set loss matrices for models trained on `ts`,
    /// each cell averaged over seeds and grid lengths. Absent variants are NaN.
    pub fn loss_matrices(&self, evals: &[CellEval], ts: Subset) -> (LossMatrix, LossMatrix) {
        let cell_mean = |set: SetId, v: Variant, f: &dyn Fn(&CellEval) -> f64| {
            let vals: Vec<f64> = evals
                .iter()
                .filter(|e| {
                    let c = &e.cell;
                    !c.probe && c.set == set && c.train_subset == ts && c.variant == v
                })
                .map(f)
                .collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                mean(&vals)
            }
        };
        let row = |set: SetId, class: &str, f: &dyn Fn(&CellEval) -> f64| LossRow {
            dataset: set,
            class: class.to_string(),
            cells: [Variant::A, Variant::B, Variant::C].map(|v| cell_mean(set, v, f)),
        };
        let mut train_m = LossMatrix::default();
        let mut test_m = LossMatrix::default();
        for &set in &self.config.datasets {
            train_m.rows.push(row(set, ts.name(), &|e| e.train_loss));
            test_m.rows.push(row(set, "normal", &|e| e.normal_loss));
            test_m.rows.push(row(set, "abnormal", &|e| e.abnormal_loss));
        }
        (train_m, test_m)
    }
}
