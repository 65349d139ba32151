//! Encoder-decoder built from two LSTM cells and a softmax output layer.
//!
//! The encoder reads the input window from a zero state. Its final `(h, c)`
//! becomes the decoder's initial state, and the decoder is then unrolled for
//! `L` steps on zero inputs. Each decoder hidden state is projected to one
//! logit per symbol.
//!
//! The three variants share this architecture exactly; they differ only in
//! which window of the stream they are trained to emit (see
//! [`Variant::target_offset`]).

use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::lstm::{LstmParams, LstmState, StepTrace};
use crate::numerics::{
    cross_entropy, rand_matrix, softmax_into, Matrix, ParamSet, Rng, Scalar, Vector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// Predicts the next `L` symbols.
    A,
    /// Emits the window shifted by `⌊L/2⌋`.
    B,
    /// Restores the input window.
    C,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::A, Variant::B, Variant::C];

    /// Distance between the input window start and the target window start.
    pub fn target_offset(self, seq_len: usize) -> usize {
        match self {
            Variant::A => seq_len,
            Variant::B => seq_len / 2,
            Variant::C => 0,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Variant::A => 'A',
            Variant::B => 'B',
            Variant::C => 'C',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().trim_start_matches("MODEL-") {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            other => Err(Error::Parse(format!("unknown variant {other:?}"))),
        }
    }
}

/// Trainable arrays of the model. Also the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct RedParams<T> {
    pub encoder: LstmParams<T>,
    pub decoder: LstmParams<T>,
    /// alphabet × hidden
    pub proj_w: Matrix<T>,
    pub proj_b: Vector<T>,
}

pub type RedGrads<T> = RedParams<T>;

impl<T: Scalar> RedParams<T> {
    pub fn zeros(alphabet_size: usize, hidden_dim: usize) -> Self {
        Self {
            encoder: LstmParams::zeros(alphabet_size, hidden_dim),
            decoder: LstmParams::zeros(alphabet_size, hidden_dim),
            proj_w: Matrix::zeros(alphabet_size, hidden_dim),
            proj_b: Vector::zeros(alphabet_size),
        }
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Every named array in checkpoint order.
    pub fn named_arrays(&self) -> Vec<(String, usize, usize, &[T])> {
        let mut out = Vec::new();
        for (prefix, lstm) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (name, r, c, data) in lstm.named_arrays() {
                out.push((format!("{prefix}.{name}"), r, c, data));
            }
        }
        out.push((
            "proj.W".to_string(),
            self.proj_w.rows(),
            self.proj_w.cols(),
            self.proj_w.as_slice(),
        ));
        out.push(("proj.b".to_string(), self.proj_b.len(), 1, &self.proj_b[..]));
        out
    }
}

impl<T: Scalar> ParamSet<T> for RedParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut out = self.encoder.slices();
        out.extend(self.decoder.slices());
        out.push(self.proj_w.as_slice());
        out.push(&self.proj_b[..]);
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.encoder.slices_mut();
        out.extend(self.decoder.slices_mut());
        out.push(self.proj_w.as_mut_slice());
        out.push(&mut self.proj_b[..]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedModel<T> {
    pub params: RedParams<T>,
    pub variant: Variant,
    pub seq_len: usize,
    pub alphabet_size: usize,
}

/// Forward-pass record consumed by [`RedModel::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct RedTrace<T> {
    pub encoder: Vec<StepTrace<T>>,
    pub decoder: Vec<StepTrace<T>>,
    pub logits: Vec<Vector<T>>,
    pub probs: Vec<Vector<T>>,
}

impl<T: Scalar> RedTrace<T> {
    /// Argmax symbol of each output step.
    pub fn decoded(&self) -> Vec<usize> {
        self.probs.iter().map(|p| p.argmax()).collect()
    }
}

impl<T: Scalar> RedModel<T> {
    /// Initializes encoder, decoder and projection from one seeded stream.
    pub fn init(
        alphabet_size: usize,
        hidden_dim: usize,
        seq_len: usize,
        variant: Variant,
        rng: &mut Rng,
    ) -> Self {
        assert!(alphabet_size >= 1 && hidden_dim >= 1 && seq_len >= 1);
        let encoder = LstmParams::init(alphabet_size, hidden_dim, rng);
        let decoder = LstmParams::init(alphabet_size, hidden_dim, rng);
        let proj_w = rand_matrix(
            rng,
            alphabet_size,
            hidden_dim,
            1.0 / (hidden_dim as f64).sqrt(),
        );
        Self {
            params: RedParams {
                encoder,
                decoder,
                proj_w,
                proj_b: Vector::zeros(alphabet_size),
            },
            variant,
            seq_len,
            alphabet_size,
        }
    }

    /// A model with every parameter zero. Its outputs are uniform.
    pub fn zeros(
        alphabet_size: usize,
        hidden_dim: usize,
        seq_len: usize,
        variant: Variant,
    ) -> Self {
        Self {
            params: RedParams::zeros(alphabet_size, hidden_dim),
            variant,
            seq_len,
            alphabet_size,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.encoder.hidden_dim()
    }

    pub fn target_offset(&self) -> usize {
        self.variant.target_offset(self.seq_len)
    }

    pub fn param_count(&self) -> usize {
        self.params.encoder.count()
            + self.params.decoder.count()
            + self.alphabet_size * self.hidden_dim()
            + self.alphabet_size
    }

    pub fn forward(&self, xs: &[Vector<T>]) -> Result<RedTrace<T>> {
        check_dim("RED input window length", self.seq_len, xs.len())?;
        let hidden = self.hidden_dim();
        let (encoder, handoff) = self.params.encoder.forward(xs, &LstmState::zeros(hidden))?;
        let zeros = vec![Vector::zeros(self.alphabet_size); self.seq_len];
        let (decoder, _) = self.params.decoder.forward(&zeros, &handoff)?;
        let mut logits = Vec::with_capacity(self.seq_len);
        let mut probs = Vec::with_capacity(self.seq_len);
        for tr in &decoder {
            let mut z = self.params.proj_b.clone();
            self.params.proj_w.matvec_acc(&tr.h, &mut z);
            let mut p = Vector::zeros(self.alphabet_size);
            softmax_into(&z, &mut p);
            logits.push(z);
            probs.push(p);
        }
        Ok(RedTrace {
            encoder,
            decoder,
            logits,
            probs,
        })
    }

    /// Summed per-step cross-entropy against `ys`.
    pub fn loss(&self, trace: &RedTrace<T>, ys: &[Vector<T>]) -> Result<T> {
        red_loss(trace, ys)
    }

    pub fn backward(&self, trace: &RedTrace<T>, ys: &[Vector<T>]) -> Result<RedGrads<T>> {
        let mut grads = RedParams::zeros(self.alphabet_size, self.hidden_dim());
        self.backward_accumulate(trace, ys, T::one(), &mut grads)?;
        Ok(grads)
    }

    /// Adds `weight · ∂loss/∂params` into `grads`.
    pub fn backward_accumulate(
        &self,
        trace: &RedTrace<T>,
        ys: &[Vector<T>],
        weight: T,
        grads: &mut RedGrads<T>,
    ) -> Result<()> {
        let hidden = self.hidden_dim();
        check_dim("RED target window length", self.seq_len, ys.len())?;
        check_dim(
            "RED trace decoder length",
            self.seq_len,
            trace.decoder.len(),
        )?;
        check_dim(
            "RED trace encoder length",
            self.seq_len,
            trace.encoder.len(),
        )?;
        check_dim(
            "RED gradient hidden_dim",
            hidden,
            grads.encoder.hidden_dim(),
        )?;
        check_dim(
            "RED gradient alphabet",
            self.alphabet_size,
            grads.proj_b.len(),
        )?;

        let mut dh = Vec::with_capacity(self.seq_len);
        let mut dz = Vector::zeros(self.alphabet_size);
        for ((tr, p), y) in trace.decoder.iter().zip(&trace.probs).zip(ys) {
            check_dim("RED trace width", hidden, tr.h.len())?;
            check_dim("RED target width", self.alphabet_size, y.len())?;
            let mass: T = y.iter().copied().sum();
            for k in 0..self.alphabet_size {
                dz[k] = weight * (p[k] * mass - y[k]);
            }
            grads.proj_w.outer_acc(T::one(), &dz, &tr.h);
            for (gb, &d) in grads.proj_b.iter_mut().zip(dz.iter()) {
                *gb = *gb + d;
            }
            let mut d = Vector::zeros(hidden);
            self.params.proj_w.matvec_t_acc(&dz, &mut d);
            dh.push(d);
        }
        let handoff = self.params.decoder.bptt_accumulate(
            &trace.decoder,
            Some(&dh),
            &LstmState::zeros(hidden),
            &mut grads.decoder,
        )?;
        self.params
            .encoder
            .bptt_accumulate(&trace.encoder, None, &handoff, &mut grads.encoder)?;
        Ok(())
    }
}

/// `Σ_t cross_entropy(softmax_t, Y_t)`
pub fn red_loss<T: Scalar>(trace: &RedTrace<T>, ys: &[Vector<T>]) -> Result<T> {
    check_dim("RED loss target length", trace.probs.len(), ys.len())?;
    let mut total = T::zero();
    for (p, y) in trace.probs.iter().zip(ys) {
        check_dim("RED loss target width", p.len(), y.len())?;
        total = total + cross_entropy(p, y);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rand_gaussian;

    fn onehot(k: usize, n: usize) -> Vector<f64> {
        let mut v = Vector::zeros(n);
        v[k] = 1.0;
        v
    }

    #[test]
    fn offsets() {
        assert_eq!(Variant::A.target_offset(3), 3);
        assert_eq!(Variant::C.target_offset(3), 0);
        assert_eq!(Variant::B.target_offset(3), 1);
        assert_eq!(Variant::B.target_offset(8), 4);
    }

    #[test]
    fn variant_parse_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("model-c".parse::<Variant>().unwrap(), Variant::C);
        assert!("D".parse::<Variant>().is_err());
    }

    #[test]
    fn param_counts() {
        let a = RedModel::<f64>::init(15, 64, 8, Variant::A, &mut Rng::new(3));
        let c = RedModel::<f64>::init(15, 64, 8, Variant::C, &mut Rng::new(3));
        assert_eq!(a.param_count(), c.param_count());
        // 2·4·(64·15 + 64·64 + 64) + 975
        assert_eq!(a.param_count(), 41_935);
        assert_eq!(a.params.param_count(), 41_935);
        assert_eq!(15 * 64 + 15, 975);
        assert_eq!(a.params.decoder.input_dim(), 15);
        let small = RedModel::<f64>::init(15, 32, 8, Variant::B, &mut Rng::new(3));
        assert!(small.param_count() < a.param_count());
    }

    #[test]
    fn zero_model_outputs_uniform() {
        let m = RedModel::<f64>::zeros(5, 4, 3, Variant::C);
        let xs: Vec<_> = (0..3).map(|k| onehot(k, 5)).collect();
        let tr = m.forward(&xs).unwrap();
        assert_eq!(tr.probs.len(), 3);
        for p in &tr.probs {
            for &v in p.iter() {
                assert!((v - 0.2).abs() < 1e-15);
            }
        }
        let loss = m.loss(&tr, &xs).unwrap();
        assert!((loss - 3.0 * 5f64.ln()).abs() < 1e-12);
        assert!((loss - 4.828).abs() < 1e-3);
        assert_eq!(tr.decoded(), vec![0, 0, 0]);
    }

    #[test]
    fn forward_shapes_and_determinism() {
        for l in [3usize, 8] {
            let m = RedModel::<f64>::init(15, 6, l, Variant::A, &mut Rng::new(4));
            let xs: Vec<_> = (0..l).map(|k| onehot(k % 15, 15)).collect();
            let t1 = m.forward(&xs).unwrap();
            let t2 = m.forward(&xs).unwrap();
            assert_eq!(t1.logits.len(), l);
            assert_eq!(t1, t2);
            for p in &t1.probs {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let m = RedModel::<f64>::init(5, 4, 3, Variant::A, &mut Rng::new(4));
        let xs: Vec<_> = (0..4).map(|k| onehot(k, 5)).collect();
        assert!(m.forward(&xs).is_err());
    }

    #[test]
    fn variant_does_not_change_forward() {
        let a = RedModel::<f64>::init(5, 4, 3, Variant::A, &mut Rng::new(8));
        let mut c = a.clone();
        c.variant = Variant::C;
        let xs: Vec<_> = (0..3).map(|k| onehot(k, 5)).collect();
        assert_eq!(a.forward(&xs).unwrap(), c.forward(&xs).unwrap());
    }

    #[test]
    fn confident_correct_outputs_have_tiny_loss_and_gradient() {
        let mut m = RedModel::<f64>::zeros(5, 4, 3, Variant::C);
        // Every step emits symbol 2 with a logit gap of 50.
        m.params.proj_b[2] = 50.0;
        let xs: Vec<_> = (0..3).map(|_| onehot(2, 5)).collect();
        let tr = m.forward(&xs).unwrap();
        assert!(m.loss(&tr, &xs).unwrap() < 0.01);
        let g = m.backward(&tr, &xs).unwrap();
        let norm: f64 = g
            .slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-6);
    }

    #[test]
    fn generic_instance_has_encoder_gradient() {
        let m = RedModel::<f64>::init(5, 4, 3, Variant::A, &mut Rng::new(12));
        let mut rng = Rng::new(13);
        let xs: Vec<_> = (0..3).map(|_| onehot(rng.below(5), 5)).collect();
        let ys: Vec<_> = (0..3).map(|_| onehot(rng.below(5), 5)).collect();
        let g = m.backward(&m.forward(&xs).unwrap(), &ys).unwrap();
        let enc: f64 = g
            .encoder
            .slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum();
        assert!(enc > 0.0);
    }

    #[test]
    fn loss_is_invariant_under_joint_step_permutation() {
        let mut rng = Rng::new(31);
        let m = RedModel::<f64>::init(5, 4, 4, Variant::B, &mut rng);
        let xs: Vec<_> = (0..4).map(|_| rand_gaussian(&mut rng, 5, 1.0)).collect();
        let ys: Vec<_> = (0..4).map(|_| onehot(rng.below(5), 5)).collect();
        let tr = m.forward(&xs).unwrap();
        let base = red_loss(&tr, &ys).unwrap();
        let mut perm: Vec<usize> = (0..4).collect();
        rng.shuffle(&mut perm);
        let mut shuffled = tr.clone();
        shuffled.probs = perm.iter().map(|&k| tr.probs[k].clone()).collect();
        let ys_perm: Vec<_> = perm.iter().map(|&k| ys[k].clone()).collect();
        let permuted = red_loss(&shuffled, &ys_perm).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(44);
        let m = RedModel::<f64>::init(5, 4, 3, Variant::B, &mut rng);
        let xs: Vec<_> = (0..3).map(|_| rand_gaussian(&mut rng, 5, 1.0)).collect();
        let ys: Vec<_> = (0..3).map(|_| onehot(rng.below(5), 5)).collect();
        let g = m.backward(&m.forward(&xs).unwrap(), &ys).unwrap();
        let flat: Vec<f64> = g.slices().concat();
        let loss_at =
            |model: &RedModel<f64>| model.loss(&model.forward(&xs).unwrap(), &ys).unwrap();
        let eps = 1e-5;
        let mut idx = 0;
        for a in 0..m.params.slices().len() {
            for k in 0..m.params.slices()[a].len() {
                let mut plus = m.clone();
                plus.params.slices_mut()[a][k] += eps;
                let mut minus = m.clone();
                minus.params.slices_mut()[a][k] -= eps;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                let an = flat[idx];
                // Below ~1e-5 the central difference is dominated by rounding noise.
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-5);
                assert!(rel < 1e-5, "array {a}[{k}]: {an} vs {fd}");
                idx += 1;
            }
        }
    }
}
