//! Single-layer LSTM cell: forward recurrence and backpropagation through time.
//!
//! The step is the textbook five-equation cell without peepholes:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)
//! o = σ(W_o x + U_o h + b_o)
//! f = σ(W_f x + U_f h + b_f)
//! c' = f ∘ c + i ∘ tanh(W_c x + U_c h + b_c)
//! h' = o ∘ tanh(c')
//! ```

use crate::error::{check_dim, Error, Result};
use crate::numerics::{rand_matrix, sigmoid_scalar, Matrix, ParamSet, Rng, Scalar, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Output,
    Forget,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Output, Gate::Forget, Gate::Cell];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short name used in checkpoints (`W_i`, `U_f`, ...).
    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Forget => "f",
            Gate::Cell => "c",
        }
    }
}

/// Input weights `W`, recurrent weights `U` and bias `b` for each gate.
///
/// The same shape doubles as the gradient container returned by
/// [`LstmParams::bptt`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    input_dim: usize,
    hidden_dim: usize,
    w: [Matrix<T>; 4],
    u: [Matrix<T>; 4],
    b: [Vector<T>; 4],
}

/// Recurrent state `(h, c)`; also used for gradients with respect to a state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vector<T>,
    pub c: Vector<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Vector::zeros(hidden_dim),
            c: Vector::zeros(hidden_dim),
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace<T> {
    pub x: Vector<T>,
    pub h_prev: Vector<T>,
    pub c_prev: Vector<T>,
    pub i: Vector<T>,
    pub o: Vector<T>,
    pub f: Vector<T>,
    /// `tanh(W_c x + U_c h + b_c)`
    pub candidate: Vector<T>,
    pub c: Vector<T>,
    pub h: Vector<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w: std::array::from_fn(|_| Matrix::zeros(hidden_dim, input_dim)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden_dim, hidden_dim)),
            b: std::array::from_fn(|_| Vector::zeros(hidden_dim)),
        }
    }

    /// Uniform `±1/√hidden` weights, forget bias `+1`, other biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        assert!(input_dim >= 1 && hidden_dim >= 1, "LSTM dims must be >= 1");
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden_dim);
        for g in Gate::ALL {
            p.w[g.index()] = rand_matrix(rng, hidden_dim, input_dim, scale);
            p.u[g.index()] = rand_matrix(rng, hidden_dim, hidden_dim, scale);
        }
        p.b[Gate::Forget.index()]
            .iter_mut()
            .for_each(|v| *v = T::one());
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn w(&self, g: Gate) -> &Matrix<T> {
        &self.w[g.index()]
    }

    pub fn u(&self, g: Gate) -> &Matrix<T> {
        &self.u[g.index()]
    }

    pub fn b(&self, g: Gate) -> &Vector<T> {
        &self.b[g.index()]
    }

    pub fn w_mut(&mut self, g: Gate) -> &mut Matrix<T> {
        &mut self.w[g.index()]
    }

    pub fn u_mut(&mut self, g: Gate) -> &mut Matrix<T> {
        &mut self.u[g.index()]
    }

    pub fn b_mut(&mut self, g: Gate) -> &mut Vector<T> {
        &mut self.b[g.index()]
    }

    /// `4·(hidden·input + hidden·hidden + hidden)`
    pub fn count(&self) -> usize {
        4 * (self.hidden_dim * self.input_dim + self.hidden_dim * self.hidden_dim + self.hidden_dim)
    }

    /// Named arrays in checkpoint order: `W_i, U_i, b_i, W_o, ...`.
    pub fn named_arrays(&self) -> Vec<(String, usize, usize, &[T])> {
        let mut out = Vec::with_capacity(12);
        for g in Gate::ALL {
            let (w, u, b) = (self.w(g), self.u(g), self.b(g));
            out.push((
                format!("W_{}", g.suffix()),
                w.rows(),
                w.cols(),
                w.as_slice(),
            ));
            out.push((
                format!("U_{}", g.suffix()),
                u.rows(),
                u.cols(),
                u.as_slice(),
            ));
            out.push((format!("b_{}", g.suffix()), b.len(), 1, &b[..]));
        }
        out
    }

    fn check_state(&self, s: &LstmState<T>) -> Result<()> {
        check_dim("LSTM state h", self.hidden_dim, s.h.len())?;
        check_dim("LSTM state c", self.hidden_dim, s.c.len())
    }

    /// One step of the recurrence.
    pub fn step(&self, x: &[T], s: &LstmState<T>) -> Result<(LstmState<T>, StepTrace<T>)> {
        check_dim("LSTM input", self.input_dim, x.len())?;
        self.check_state(s)?;
        let trace = self.step_unchecked(x, &s.h, &s.c);
        let next = LstmState {
            h: trace.h.clone(),
            c: trace.c.clone(),
        };
        Ok((next, trace))
    }

    fn step_unchecked(&self, x: &[T], h: &[T], c: &[T]) -> StepTrace<T> {
        let n = self.hidden_dim;
        let x_zero = x.iter().all(|v| v.is_zero());
        let h_zero = h.iter().all(|v| v.is_zero());
        let mut pre: [Vector<T>; 4] = std::array::from_fn(|k| self.b[k].clone());
        for (k, z) in pre.iter_mut().enumerate() {
            if !x_zero {
                self.w[k].matvec_acc(x, z);
            }
            if !h_zero {
                self.u[k].matvec_acc(h, z);
            }
        }
        let [zi, zo, zf, zc] = pre;
        let i: Vector<T> = zi.iter().map(|&v| sigmoid_scalar(v)).collect();
        let o: Vector<T> = zo.iter().map(|&v| sigmoid_scalar(v)).collect();
        let f: Vector<T> = zf.iter().map(|&v| sigmoid_scalar(v)).collect();
        let candidate: Vector<T> = zc.iter().map(|&v| v.tanh()).collect();
        let mut c_new = Vector::zeros(n);
        let mut h_new = Vector::zeros(n);
        for k in 0..n {
            c_new[k] = f[k] * c[k] + i[k] * candidate[k];
            h_new[k] = o[k] * c_new[k].tanh();
        }
        StepTrace {
            x: Vector::from_slice(x),
            h_prev: Vector::from_slice(h),
            c_prev: Vector::from_slice(c),
            i,
            o,
            f,
            candidate,
            c: c_new,
            h: h_new,
        }
    }

    /// Runs the recurrence over `xs` from `s0`, returning every step's trace
    /// and the final state.
    pub fn forward(
        &self,
        xs: &[Vector<T>],
        s0: &LstmState<T>,
    ) -> Result<(Vec<StepTrace<T>>, LstmState<T>)> {
        if xs.is_empty() {
            return Err(Error::InvalidInput(
                "LSTM forward over an empty sequence".into(),
            ));
        }
        self.check_state(s0)?;
        for x in xs {
            check_dim("LSTM input", self.input_dim, x.len())?;
        }
        let mut traces: Vec<StepTrace<T>> = Vec::with_capacity(xs.len());
        for x in xs {
            let t = match traces.last() {
                Some(prev) => self.step_unchecked(x, &prev.h, &prev.c),
                None => self.step_unchecked(x, &s0.h, &s0.c),
            };
            traces.push(t);
        }
        let last = traces.last().expect("nonempty");
        let final_state = LstmState {
            h: last.h.clone(),
            c: last.c.clone(),
        };
        Ok((traces, final_state))
    }

    /// Gradients of a loss whose per-step `h` gradients are `dh` and whose
    /// gradient with respect to the final state is `dfinal`.
    ///
    /// Returns fresh parameter gradients and the gradient with respect to the
    /// initial state.
    pub fn bptt(
        &self,
        traces: &[StepTrace<T>],
        dh: &[Vector<T>],
        dfinal: &LstmState<T>,
    ) -> Result<(LstmParams<T>, LstmState<T>)> {
        let mut grads = LstmParams::zeros(self.input_dim, self.hidden_dim);
        let d0 = self.bptt_accumulate(traces, Some(dh), dfinal, &mut grads)?;
        Ok((grads, d0))
    }

    /// As [`bptt`](Self::bptt) but adds into `grads`. `dh = None` means no
    /// loss term reads the per-step hidden states.
    pub fn bptt_accumulate(
        &self,
        traces: &[StepTrace<T>],
        dh: Option<&[Vector<T>]>,
        dfinal: &LstmState<T>,
        grads: &mut LstmParams<T>,
    ) -> Result<LstmState<T>> {
        if let Some(dh) = dh {
            check_dim("BPTT dh length", traces.len(), dh.len())?;
            for d in dh {
                check_dim("BPTT dh width", self.hidden_dim, d.len())?;
            }
        }
        self.check_state(dfinal)?;
        check_dim("BPTT gradient input_dim", self.input_dim, grads.input_dim)?;
        check_dim(
            "BPTT gradient hidden_dim",
            self.hidden_dim,
            grads.hidden_dim,
        )?;

        let n = self.hidden_dim;
        let mut dh_next = dfinal.h.clone();
        let mut dc_next = dfinal.c.clone();
        let mut dz: [Vector<T>; 4] = std::array::from_fn(|_| Vector::zeros(n));
        let one = T::one();

        for (t, tr) in traces.iter().enumerate().rev() {
            check_dim("BPTT trace width", n, tr.h.len())?;
            for k in 0..n {
                let dh_k = match dh {
                    Some(dh) => dh[t][k] + dh_next[k],
                    None => dh_next[k],
                };
                let tc = tr.c[k].tanh();
                let dc = dc_next[k] + dh_k * tr.o[k] * (one - tc * tc);
                let (i, o, f, g) = (tr.i[k], tr.o[k], tr.f[k], tr.candidate[k]);
                dz[Gate::Output.index()][k] = dh_k * tc * o * (one - o);
                dz[Gate::Input.index()][k] = dc * g * i * (one - i);
                dz[Gate::Cell.index()][k] = dc * i * (one - g * g);
                dz[Gate::Forget.index()][k] = dc * tr.c_prev[k] * f * (one - f);
                dc_next[k] = dc * f;
            }
            let x_zero = tr.x.is_zero();
            let h_zero = tr.h_prev.is_zero();
            dh_next.fill_zero();
            for k in 0..4 {
                if !x_zero {
                    grads.w[k].outer_acc(one, &dz[k], &tr.x);
                }
                if !h_zero {
                    grads.u[k].outer_acc(one, &dz[k], &tr.h_prev);
                }
                for (gb, &d) in grads.b[k].iter_mut().zip(dz[k].iter()) {
                    *gb = *gb + d;
                }
                self.u[k].matvec_t_acc(&dz[k], &mut dh_next);
            }
        }
        Ok(LstmState {
            h: dh_next,
            c: dc_next,
        })
    }
}

impl<T: Scalar> ParamSet<T> for LstmParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(12);
        for k in 0..4 {
            out.push(self.w[k].as_slice());
            out.push(self.u[k].as_slice());
            out.push(&self.b[k][..]);
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(12);
        for ((w, u), b) in self
            .w
            .iter_mut()
            .zip(self.u.iter_mut())
            .zip(self.b.iter_mut())
        {
            out.push(w.as_mut_slice());
            out.push(u.as_mut_slice());
            out.push(&mut b[..]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rand_gaussian;

    fn random_params(seed: u64, input: usize, hidden: usize, scale: f64) -> LstmParams<f64> {
        let mut rng = Rng::new(seed);
        let mut p = LstmParams::<f64>::init(input, hidden, &mut rng);
        for g in Gate::ALL {
            *p.b_mut(g) = rand_gaussian(&mut rng, hidden, scale);
        }
        p
    }

    /// Eqs. written out one scalar at a time.
    fn scalar_step(p: &LstmParams<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = p.hidden_dim();
        let pre = |g: Gate, k: usize| {
            let mut s = p.b(g)[k];
            for j in 0..x.len() {
                s += p.w(g).get(k, j) * x[j];
            }
            for j in 0..n {
                s += p.u(g).get(k, j) * h[j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut c_out = vec![0.0; n];
        let mut h_out = vec![0.0; n];
        for k in 0..n {
            let i = sig(pre(Gate::Input, k));
            let o = sig(pre(Gate::Output, k));
            let f = sig(pre(Gate::Forget, k));
            c_out[k] = f * c[k] + i * pre(Gate::Cell, k).tanh();
            h_out[k] = o * c_out[k].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn init_count_scale_and_determinism() {
        let p = LstmParams::<f64>::init(15, 4, &mut Rng::new(1));
        assert_eq!(p.count(), 320);
        assert_eq!(p.param_count(), 320);
        let q = LstmParams::<f64>::init(15, 4, &mut Rng::new(1));
        assert_eq!(p, q);
        for g in Gate::ALL {
            assert!(p.w(g).max_abs() <= 0.5);
            assert!(p.u(g).max_abs() <= 0.5);
        }
        assert!(p.b(Gate::Forget).iter().all(|&v| v == 1.0));
        assert!(p.b(Gate::Input).is_zero());
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::<f64>::zeros(3, 2);
        let (s, tr) = p.step(&[0.4, -0.2, 1.0], &LstmState::zeros(2)).unwrap();
        assert!(s.c.is_zero() && s.h.is_zero());
        assert!(tr.i.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmParams::<f64>::zeros(2, 2);
        p.b_mut(Gate::Forget).iter_mut().for_each(|v| *v = 100.0);
        let s = LstmState {
            h: Vector::zeros(2),
            c: Vector::from_slice(&[1.0, -1.0]),
        };
        let (next, _) = p.step(&[0.3, 0.7], &s).unwrap();
        assert!((next.c[0] - 1.0).abs() < 1e-10);
        assert!((next.c[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let p = random_params(13, 2, 3, 0.5);
        let mut rng = Rng::new(99);
        let mut s = LstmState::<f64>::zeros(3);
        for _ in 0..4 {
            let x = rand_gaussian::<f64>(&mut rng, 2, 1.0);
            let (h_ref, c_ref) = scalar_step(&p, &x, &s.h, &s.c);
            let (next, _) = p.step(&x, &s).unwrap();
            for k in 0..3 {
                assert!((next.h[k] - h_ref[k]).abs() < 1e-12);
                assert!((next.c[k] - c_ref[k]).abs() < 1e-12);
            }
            s = next;
        }
    }

    #[test]
    fn step_rejects_bad_dims() {
        let p = LstmParams::<f64>::zeros(3, 2);
        assert!(p.step(&[0.0; 2], &LstmState::zeros(2)).is_err());
        assert!(p.step(&[0.0; 3], &LstmState::zeros(3)).is_err());
    }

    #[test]
    fn forward_empty_is_error() {
        let p = LstmParams::<f64>::zeros(3, 2);
        assert!(matches!(
            p.forward(&[], &LstmState::zeros(2)),
            Err(Error::InvalidInput(_))
        ));
    }

    fn seq(seed: u64, len: usize, dim: usize) -> Vec<Vector<f64>> {
        let mut rng = Rng::new(seed);
        (0..len)
            .map(|_| rand_gaussian(&mut rng, dim, 1.0))
            .collect()
    }

    #[test]
    fn forward_single_step_and_concatenation() {
        let p = random_params(4, 3, 4, 0.3);
        let s0 = LstmState::zeros(4);
        let xs = seq(5, 5, 3);
        let (traces, fin) = p.forward(&xs[..1], &s0).unwrap();
        let (single, tr) = p.step(&xs[0], &s0).unwrap();
        assert_eq!(fin, single);
        assert_eq!(traces[0], tr);

        let (_, whole) = p.forward(&xs, &s0).unwrap();
        let (_, mid) = p.forward(&xs[..2], &s0).unwrap();
        let (_, rest) = p.forward(&xs[2..], &mid).unwrap();
        assert_eq!(whole, rest);
    }

    #[test]
    fn replay_from_traces_is_bit_exact() {
        let p = random_params(21, 3, 4, 0.3);
        let xs = seq(8, 5, 3);
        let (traces, fin) = p.forward(&xs, &LstmState::zeros(4)).unwrap();
        let mut c = vec![0.0; 4];
        let mut h = vec![0.0; 4];
        for tr in &traces {
            for k in 0..4 {
                c[k] = tr.f[k] * tr.c_prev[k] + tr.i[k] * tr.candidate[k];
                h[k] = tr.o[k] * c[k].tanh();
            }
            assert_eq!(&c[..], &tr.c[..]);
            assert_eq!(&h[..], &tr.h[..]);
        }
        assert_eq!(&h[..], &fin.h[..]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let p = random_params(3, 2, 3, 0.3);
        let xs = seq(2, 4, 2);
        let (traces, _) = p.forward(&xs, &LstmState::zeros(3)).unwrap();
        let dh = vec![Vector::zeros(3); 4];
        let (g, d0) = p.bptt(&traces, &dh, &LstmState::zeros(3)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
        assert!(d0.h.is_zero() && d0.c.is_zero());
    }

    #[test]
    fn bptt_rejects_length_mismatch() {
        let p = random_params(3, 2, 3, 0.3);
        let xs = seq(2, 4, 2);
        let (traces, _) = p.forward(&xs, &LstmState::zeros(3)).unwrap();
        let dh = vec![Vector::zeros(3); 3];
        assert!(p.bptt(&traces, &dh, &LstmState::zeros(3)).is_err());
    }

    #[test]
    fn saturated_forget_bias_has_no_gradient() {
        let mut p = random_params(6, 2, 3, 0.3);
        p.b_mut(Gate::Forget).iter_mut().for_each(|v| *v = 100.0);
        let xs = seq(7, 4, 2);
        let s0 = LstmState {
            h: Vector::from_slice(&[0.1, -0.2, 0.3]),
            c: Vector::from_slice(&[0.5, 0.5, -0.5]),
        };
        let (traces, _) = p.forward(&xs, &s0).unwrap();
        let dh: Vec<Vector<f64>> = traces
            .iter()
            .map(|t| t.h.iter().map(|v| 2.0 * v).collect())
            .collect();
        let (g, _) = p.bptt(&traces, &dh, &LstmState::zeros(3)).unwrap();
        assert!(g.b(Gate::Forget).iter().all(|v| v.abs() < 1e-30));
    }

    fn sum_sq_h(p: &LstmParams<f64>, xs: &[Vector<f64>], s0: &LstmState<f64>) -> f64 {
        let (traces, _) = p.forward(xs, s0).unwrap();
        traces.iter().map(|t| t.h.norm_sq()).sum()
    }

    #[test]
    fn bptt_matches_central_differences() {
        let p = random_params(17, 2, 3, 0.5);
        let xs = seq(18, 4, 2);
        let s0 = LstmState::zeros(3);
        let (traces, _) = p.forward(&xs, &s0).unwrap();
        let dh: Vec<Vector<f64>> = traces
            .iter()
            .map(|t| t.h.iter().map(|v| 2.0 * v).collect())
            .collect();
        let (g, _) = p.bptt(&traces, &dh, &LstmState::zeros(3)).unwrap();

        let eps = 1e-5;
        let grads: Vec<f64> = g.slices().concat();
        let mut idx = 0;
        let n_arrays = p.slices().len();
        for a in 0..n_arrays {
            let len = p.slices()[a].len();
            for k in 0..len {
                let mut plus = p.clone();
                plus.slices_mut()[a][k] += eps;
                let mut minus = p.clone();
                minus.slices_mut()[a][k] -= eps;
                let fd = (sum_sq_h(&plus, &xs, &s0) - sum_sq_h(&minus, &xs, &s0)) / (2.0 * eps);
                let an = grads[idx];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "array {a} entry {k}: analytic {an} vs fd {fd}");
                idx += 1;
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn gates_and_hidden_stay_in_range(seed in 0u64..10_000, len in 1usize..8) {
                let p = random_params(seed, 3, 4, 1.0);
                let xs = seq(seed ^ 0xABCD, len, 3);
                let (traces, _) = p.forward(&xs, &LstmState::zeros(4)).unwrap();
                for tr in &traces {
                    for k in 0..4 {
                        for g in [tr.i[k], tr.o[k], tr.f[k]] {
                            prop_assert!(g > 0.0 && g < 1.0);
                        }
                        prop_assert!(tr.h[k].abs() < 1.0);
                        prop_assert!(tr.c[k].abs() <= tr.c_prev[k].abs() + 1.0);
                    }
                }
            }
        }
    }
}
