//! Minibatch Adam training of an encoder-decoder on a set of windows.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::batched::{BatchEngine, PackedRed};
use crate::corpus::{SequencePair, SetId};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Rng, Scalar};
use crate::red::{RedModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    /// Seeds the minibatch shuffle.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            batch_size: 32,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("hyperparameter {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        Ok(())
    }
}

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
        }
    }
}

/// Global L2 norm over every gradient array.
pub fn grad_norm<T: Scalar, P: ParamSet<T>>(grads: &P) -> T {
    grads
        .slices()
        .iter()
        .flat_map(|s| s.iter())
        .fold(T::zero(), |acc, &g| acc + g * g)
        .sqrt()
}

/// One Adam update at step `t` (1-based) with bias correction. Gradients are
/// rescaled so their global norm does not exceed `grad_clip_norm`.
pub fn adam_step<T: Scalar, P: ParamSet<T>>(
    params: &mut P,
    grads: &P,
    moments: &mut AdamState<T>,
    hyper: &HyperParams,
    t: u64,
) -> Result<()> {
    assert!(t >= 1, "Adam step counter is 1-based");
    let norm = grad_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "gradient norm {norm} at step {t}"
        )));
    }
    let clip = T::lit(hyper.grad_clip_norm);
    let scale = if norm > clip { clip / norm } else { T::one() };

    let b1 = T::lit(hyper.adam_beta1);
    let b2 = T::lit(hyper.adam_beta2);
    let one = T::one();
    let bc1 = one - b1.powi(t as i32);
    let bc2 = one - b2.powi(t as i32);
    let lr = T::lit(hyper.learning_rate);
    let eps = T::lit(hyper.adam_eps);

    let gs = grads.slices();
    let mut idx = 0;
    for (p, g) in params.slices_mut().into_iter().zip(gs) {
        assert_eq!(p.len(), g.len(), "parameter/gradient shape mismatch");
        for (pk, &gk) in p.iter_mut().zip(g) {
            let gk = gk * scale;
            let m = b1 * moments.m[idx] + (one - b1) * gk;
            let v = b2 * moments.v[idx] + (one - b2) * gk * gk;
            moments.m[idx] = m;
            moments.v[idx] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *pk = *pk - lr * m_hat / (v_hat.sqrt() + eps);
            idx += 1;
        }
    }
    assert_eq!(
        idx,
        moments.m.len(),
        "Adam state sized for a different model"
    );
    Ok(())
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub variant: Variant,
    pub dataset: Option<SetId>,
    pub seq_len: usize,
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// `epoch,loss` CSV, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (k, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", k + 1, l));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TrainError<T: Scalar> {
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters at the end of the last epoch that finished cleanly.
        last_good: Box<RedModel<T>>,
        curve: LossCurve,
    },
    #[error(transparent)]
    Invalid(#[from] Error),
}

/// Maps every window to the index of the first bit-identical window.
///
/// Clear corpora cut at a fixed stride contain very few distinct windows;
/// identical windows in a minibatch are evaluated once and weighted by their
/// multiplicity, which gives the same mean gradient.
fn canonical_ids<T: Scalar>(pairs: &[SequencePair<T>]) -> Vec<usize> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let key: Vec<u64> =
                p.x.iter()
                    .chain(&p.y)
                    .flat_map(|v| v.iter())
                    .map(|x| x.as_f64().to_bits())
                    .collect();
            *seen.entry(key).or_insert(k)
        })
        .collect()
}

/// Trains `model` on `pairs`.
///
/// Each epoch shuffles the windows with a stream seeded by `hyper.seed`,
/// splits them into minibatches and applies one Adam step per batch to the
/// mean batch loss. The curve records the mean per-window loss seen during
/// each epoch. Identical inputs give identical parameters and curves.
pub fn train<T: Scalar>(
    mut model: RedModel<T>,
    pairs: &[SequencePair<T>],
    hyper: &HyperParams,
) -> std::result::Result<(RedModel<T>, LossCurve), TrainError<T>> {
    hyper.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training windows".into()).into());
    }
    let mut curve = LossCurve {
        variant: model.variant,
        dataset: None,
        seq_len: model.seq_len,
        losses: Vec::with_capacity(hyper.epochs),
    };
    if hyper.epochs == 0 {
        return Ok((model, curve));
    }

    let canon = canonical_ids(pairs);
    let mut rng = Rng::new(hyper.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut engine = BatchEngine::new(&model);
    let mut grads = PackedRed::zeros(model.alphabet_size, model.hidden_dim());
    let mut moments = AdamState::new(model.params.param_count());
    let mut last_good = model.clone();
    let mut step: u64 = 0;
    let mut windows: Vec<&SequencePair<T>> = Vec::with_capacity(hyper.batch_size);
    let mut weights: Vec<T> = Vec::with_capacity(hyper.batch_size);
    let mut counts: Vec<usize> = Vec::with_capacity(hyper.batch_size);

    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in batch {
                *groups.entry(canon[i]).or_default() += 1;
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            windows.clear();
            weights.clear();
            counts.clear();
            for (&ci, &count) in &groups {
                windows.push(&pairs[ci]);
                weights.push(inv * T::lit(count as f64));
                counts.push(count);
            }
            grads.fill_zero();
            let losses = engine.forward_backward(&windows, &weights, &mut grads)?;
            for ((loss, &count), &ci) in losses.iter().zip(&counts).zip(groups.keys()) {
                if !loss.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: format!("non-finite loss on window {ci}"),
                        last_good: Box::new(last_good),
                        curve,
                    });
                }
                epoch_loss += loss.as_f64() * count as f64;
            }
            step += 1;
            if let Err(e) = adam_step(&mut engine.params, &grads, &mut moments, hyper, step) {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: e.to_string(),
                    last_good: Box::new(last_good),
                    curve,
                });
            }
            engine.refresh();
        }
        let mean = epoch_loss / pairs.len() as f64;
        log::debug!(
            "variant {} L={} epoch {}: loss {mean:.5}",
            model.variant,
            model.seq_len,
            epoch + 1
        );
        curve.losses.push(mean);
        engine.store(&mut last_good);
    }
    engine.store(&mut model);
    Ok((model, curve))
}
