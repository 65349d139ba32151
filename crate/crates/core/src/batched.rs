//! Minibatch forward/backward that runs many windows through the
//! encoder-decoder in lockstep.
//!
//! Gate weights are packed column-wise (`x · Wᵀ` layout, gates side by side
//! in the order i, o, f, c) so every per-step product is a small dense GEMM.
//! The math is identical to [`RedModel::forward`]/[`RedModel::backward`];
//! those stay the reference implementation and the tests below check the two
//! against each other.

use crate::corpus::SequencePair;
use crate::error::{check_dim, Result};
use crate::lstm::{Gate, LstmParams};
use crate::numerics::{argmax, sigmoid_fast, tanh_fast, Matrix, ParamSet, Scalar, Vector};
use crate::red::{RedModel, RedParams};

/// `c[m×n] += a · b` where element `(i, p)` of `a` is `a[i·ars + p·acs]` and
/// `b` is row-major `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    ars: usize,
    acs: usize,
    b: &[T],
    c: &mut [T],
) {
    assert!(
        b.len() >= k * n && c.len() >= m * n,
        "gemm: b or c too short"
    );
    assert!(
        m == 0 || k == 0 || a.len() > (m - 1) * ars + (k - 1) * acs,
        "gemm: a too short"
    );
    #[cfg(target_arch = "x86_64")]
    if avx512::available() {
        if let (Some(a64), Some(b64), Some(c64)) = (as_f64(a), as_f64(b), as_f64_mut(c)) {
            let full = avx512::gemm_acc(m, n, k, a64, ars, acs, b64, c64);
            if full < n {
                gemm_edge(0..m, full..n, n, k, a, ars, acs, b, c);
            }
            return;
        }
    }
    let full = n - n % NR;
    let body = m - m % 4;
    // Column panels outermost so each `k×NR` panel of `b` stays in L1.
    for j in (0..full).step_by(NR) {
        for i in (0..body).step_by(4) {
            tile::<T, 4>(i, j, n, k, a, ars, acs, b, c);
        }
        for i in body..m {
            tile::<T, 1>(i, j, n, k, a, ars, acs, b, c);
        }
    }
    if full < n {
        gemm_edge(0..m, full..n, n, k, a, ars, acs, b, c);
    }
}

const NR: usize = 16;

fn as_f64<T: Scalar>(s: &[T]) -> Option<&[f64]> {
    (std::any::TypeId::of::<T>() == std::any::TypeId::of::<f64>())
        // SAFETY: T is f64, so the cast only changes the static type.
        .then(|| unsafe { std::slice::from_raw_parts(s.as_ptr() as *const f64, s.len()) })
}

fn as_f64_mut<T: Scalar>(s: &mut [T]) -> Option<&mut [f64]> {
    (std::any::TypeId::of::<T>() == std::any::TypeId::of::<f64>())
        // SAFETY: as in `as_f64`.
        .then(|| unsafe { std::slice::from_raw_parts_mut(s.as_mut_ptr() as *mut f64, s.len()) })
}

fn sigmoid_in_place<T: Scalar>(v: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if avx512::available() {
        if let Some(v) = as_f64_mut(v) {
            avx512::activate::<false>(v);
            return;
        }
    }
    for x in v.iter_mut() {
        *x = sigmoid_fast(*x);
    }
}

fn tanh_in_place<T: Scalar>(v: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if avx512::available() {
        if let Some(v) = as_f64_mut(v) {
            avx512::activate::<true>(v);
            return;
        }
    }
    for x in v.iter_mut() {
        *x = tanh_fast(*x);
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;
    use std::sync::OnceLock;

    pub(super) fn available() -> bool {
        static HAS: OnceLock<bool> = OnceLock::new();
        *HAS.get_or_init(|| std::arch::is_x86_feature_detected!("avx512f"))
    }

    /// Full 16-column panels of `c += a·b`; returns the first column not
    /// handled. Bounds are checked by the caller.
    #[allow(clippy::too_many_arguments)]
    pub(super) fn gemm_acc(
        m: usize,
        n: usize,
        k: usize,
        a: &[f64],
        ars: usize,
        acs: usize,
        b: &[f64],
        c: &mut [f64],
    ) -> usize {
        let full = n - n % 16;
        let (a, b, c) = (a.as_ptr(), b.as_ptr(), c.as_mut_ptr());
        for j in (0..full).step_by(16) {
            let mut i = 0;
            // SAFETY: avx512f was detected at runtime and every index stays
            // below the lengths asserted in `super::gemm_acc`.
            unsafe {
                while i + 8 <= m {
                    tile::<8>(i, j, n, k, a, ars, acs, b, c);
                    i += 8;
                }
                while i + 2 <= m {
                    tile::<2>(i, j, n, k, a, ars, acs, b, c);
                    i += 2;
                }
                if i < m {
                    tile::<1>(i, j, n, k, a, ars, acs, b, c);
                }
            }
        }
        full
    }

    /// In-place sigmoid (`TANH = false`) or tanh over `v`, same formulas as
    /// `sigmoid_fast`/`tanh_fast`.
    pub(super) fn activate<const TANH: bool>(v: &mut [f64]) {
        let n = v.len();
        let p = v.as_mut_ptr();
        let mut i = 0;
        // SAFETY: avx512f detected; full vectors stay below `n`, the tail
        // uses a mask covering exactly the remaining elements.
        unsafe {
            while i + 8 <= n {
                let x = _mm512_loadu_pd(p.add(i));
                _mm512_storeu_pd(p.add(i), act8::<TANH>(x));
                i += 8;
            }
            if i < n {
                let mask: __mmask8 = (1u16 << (n - i)) as u8 - 1;
                let x = _mm512_maskz_loadu_pd(mask, p.add(i));
                _mm512_mask_storeu_pd(p.add(i), mask, act8::<TANH>(x));
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    fn act8<const TANH: bool>(x: __m512d) -> __m512d {
        let one = _mm512_set1_pd(1.0);
        let sign = _mm512_set1_pd(-0.0);
        let e = if TANH {
            // exp(-2|x|)
            let ax = _mm512_castsi512_pd(_mm512_andnot_si512(
                _mm512_castpd_si512(sign),
                _mm512_castpd_si512(x),
            ));
            exp8(_mm512_mul_pd(_mm512_set1_pd(-2.0), ax))
        } else {
            exp8(_mm512_sub_pd(_mm512_setzero_pd(), x))
        };
        if TANH {
            let t = _mm512_div_pd(_mm512_sub_pd(one, e), _mm512_add_pd(one, e));
            let s = _mm512_and_si512(_mm512_castpd_si512(x), _mm512_castpd_si512(sign));
            _mm512_castsi512_pd(_mm512_or_si512(_mm512_castpd_si512(t), s))
        } else {
            _mm512_div_pd(one, _mm512_add_pd(one, e))
        }
    }

    #[target_feature(enable = "avx512f")]
    fn exp8(x: __m512d) -> __m512d {
        const SHIFTER: f64 = 6755399441055744.0;
        // MINPD/MAXPD return the second operand when either is NaN.
        let x = _mm512_max_pd(
            _mm512_set1_pd(-708.0),
            _mm512_min_pd(_mm512_set1_pd(709.0), x),
        );
        let shifter = _mm512_set1_pd(SHIFTER);
        let k = _mm512_fmadd_pd(x, _mm512_set1_pd(std::f64::consts::LOG2_E), shifter);
        let n = _mm512_sub_pd(k, shifter);
        let r = _mm512_fnmadd_pd(n, _mm512_set1_pd(6.931_471_803_691_238_164_90e-1), x);
        let r = _mm512_fnmadd_pd(n, _mm512_set1_pd(1.908_214_929_270_587_700_02e-10), r);
        let r2 = _mm512_mul_pd(r, r);
        let c = |v: f64| _mm512_set1_pd(v);
        // Degree-13 Taylor polynomial, Estrin form.
        let p01 = _mm512_fmadd_pd(r, c(1.0), c(1.0));
        let p23 = _mm512_fmadd_pd(r, c(1.0 / 6.0), c(0.5));
        let p45 = _mm512_fmadd_pd(r, c(1.0 / 120.0), c(1.0 / 24.0));
        let p67 = _mm512_fmadd_pd(r, c(1.0 / 5_040.0), c(1.0 / 720.0));
        let p89 = _mm512_fmadd_pd(r, c(1.0 / 362_880.0), c(1.0 / 40_320.0));
        let pab = _mm512_fmadd_pd(r, c(1.0 / 39_916_800.0), c(1.0 / 3_628_800.0));
        let pcd = _mm512_fmadd_pd(r, c(1.0 / 6_227_020_800.0), c(1.0 / 479_001_600.0));
        let r4 = _mm512_mul_pd(r2, r2);
        let q0 = _mm512_fmadd_pd(r2, p23, p01);
        let q1 = _mm512_fmadd_pd(r2, p67, p45);
        let q2 = _mm512_fmadd_pd(r2, pab, p89);
        let s0 = _mm512_fmadd_pd(r4, q1, q0);
        let s1 = _mm512_fmadd_pd(r4, pcd, q2);
        let r8 = _mm512_mul_pd(r4, r4);
        let poly = _mm512_fmadd_pd(r8, s1, s0);
        let bits = _mm512_slli_epi64::<52>(_mm512_add_epi64(
            _mm512_sub_epi64(_mm512_castpd_si512(k), _mm512_castpd_si512(shifter)),
            _mm512_set1_epi64(1023),
        ));
        _mm512_mul_pd(poly, _mm512_castsi512_pd(bits))
    }

    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn tile<const MR: usize>(
        i: usize,
        j: usize,
        n: usize,
        k: usize,
        a: *const f64,
        ars: usize,
        acs: usize,
        b: *const f64,
        c: *mut f64,
    ) {
        let mut lo = [_mm512_setzero_pd(); MR];
        let mut hi = [_mm512_setzero_pd(); MR];
        for p in 0..k {
            let b0 = _mm512_loadu_pd(b.add(p * n + j));
            let b1 = _mm512_loadu_pd(b.add(p * n + j + 8));
            for r in 0..MR {
                let av = _mm512_set1_pd(*a.add((i + r) * ars + p * acs));
                lo[r] = _mm512_fmadd_pd(av, b0, lo[r]);
                hi[r] = _mm512_fmadd_pd(av, b1, hi[r]);
            }
        }
        for r in 0..MR {
            let cp = c.add((i + r) * n + j);
            _mm512_storeu_pd(cp, _mm512_add_pd(_mm512_loadu_pd(cp), lo[r]));
            _mm512_storeu_pd(cp.add(8), _mm512_add_pd(_mm512_loadu_pd(cp.add(8)), hi[r]));
        }
    }
}

/// Register tile: `MR` rows by `NR` columns of `c`, accumulated over all of `k`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tile<T: Scalar, const MR: usize>(
    i: usize,
    j: usize,
    n: usize,
    k: usize,
    a: &[T],
    ars: usize,
    acs: usize,
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let bp: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
        let av: [T; MR] = std::array::from_fn(|r| a[(i + r) * ars + p * acs]);
        for r in 0..MR {
            for q in 0..NR {
                acc[r][q] = T::madd(av[r], bp[q], acc[r][q]);
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        let cr: &mut [T; NR] = (&mut c[(i + r) * n + j..(i + r) * n + j + NR])
            .try_into()
            .unwrap();
        for q in 0..NR {
            cr[q] = cr[q] + row[q];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_edge<T: Scalar>(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    n: usize,
    k: usize,
    a: &[T],
    ars: usize,
    acs: usize,
    b: &[T],
    c: &mut [T],
) {
    for i in rows {
        let crow = &mut c[i * n + cols.start..i * n + cols.end];
        for p in 0..k {
            let av = a[i * ars + p * acs];
            if av.is_zero() {
                continue;
            }
            let brow = &b[p * n + cols.start..p * n + cols.end];
            for (cq, &bq) in crow.iter_mut().zip(brow) {
                *cq = *cq + av * bq;
            }
        }
    }
}

/// `c[B×n] += x[B×d] · b[d×n]`, skipping zero entries of `x` when it is
/// mostly zeros (one-hot inputs).
fn input_product<T: Scalar>(rows: usize, d: usize, n: usize, x: &[T], b: &[T], c: &mut [T]) {
    let nnz = x[..rows * d].iter().filter(|v| !v.is_zero()).count();
    if 2 * nnz >= rows * d {
        gemm_acc(rows, n, d, x, d, 1, b, c);
        return;
    }
    for r in 0..rows {
        let crow = &mut c[r * n..(r + 1) * n];
        for p in 0..d {
            let xv = x[r * d + p];
            if !xv.is_zero() {
                for (cq, &bq) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cq = *cq + xv * bq;
                }
            }
        }
    }
}

/// `g[d×n] += xᵀ · dz` with the same zero skipping.
fn input_grad<T: Scalar>(rows: usize, d: usize, n: usize, x: &[T], dz: &[T], g: &mut [T]) {
    let nnz = x[..rows * d].iter().filter(|v| !v.is_zero()).count();
    if 2 * nnz >= rows * d {
        gemm_acc(d, n, rows, x, 1, d, dz, g);
        return;
    }
    for r in 0..rows {
        let dzr = &dz[r * n..(r + 1) * n];
        for p in 0..d {
            let xv = x[r * d + p];
            if !xv.is_zero() {
                for (gq, &dq) in g[p * n..(p + 1) * n].iter_mut().zip(dzr) {
                    *gq = *gq + xv * dq;
                }
            }
        }
    }
}

/// LSTM weights in packed layout: `wt` is `input × 4H`, `ut` is `H × 4H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLstm<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wt: Vec<T>,
    pub ut: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> PackedLstm<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let g = 4 * hidden_dim;
        Self {
            input_dim,
            hidden_dim,
            wt: vec![T::zero(); input_dim * g],
            ut: vec![T::zero(); hidden_dim * g],
            b: vec![T::zero(); g],
        }
    }

    pub fn pack(p: &LstmParams<T>) -> Self {
        let (d, h) = (p.input_dim(), p.hidden_dim());
        let g4 = 4 * h;
        let mut out = Self::zeros(d, h);
        for gate in Gate::ALL {
            let base = gate.index() * h;
            for r in 0..h {
                for k in 0..d {
                    out.wt[k * g4 + base + r] = p.w(gate).get(r, k);
                }
                for k in 0..h {
                    out.ut[k * g4 + base + r] = p.u(gate).get(r, k);
                }
                out.b[base + r] = p.b(gate)[r];
            }
        }
        out
    }

    pub fn unpack(&self) -> LstmParams<T> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let g4 = 4 * h;
        let mut p = LstmParams::zeros(d, h);
        for gate in Gate::ALL {
            let base = gate.index() * h;
            for r in 0..h {
                for k in 0..d {
                    p.w_mut(gate).set(r, k, self.wt[k * g4 + base + r]);
                }
                for k in 0..h {
                    p.u_mut(gate).set(r, k, self.ut[k * g4 + base + r]);
                }
                p.b_mut(gate)[r] = self.b[base + r];
            }
        }
        p
    }

    /// `4H × H` transpose of `ut`.
    fn u_rows(&self) -> Vec<T> {
        transpose(&self.ut, self.hidden_dim, 4 * self.hidden_dim)
    }
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Packed encoder, decoder and projection (`pwt` is `H × alphabet`). Used
/// both for parameters and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRed<T> {
    pub enc: PackedLstm<T>,
    pub dec: PackedLstm<T>,
    pub pwt: Vec<T>,
    pub pb: Vec<T>,
}

impl<T: Scalar> PackedRed<T> {
    pub fn zeros(alphabet: usize, hidden: usize) -> Self {
        Self {
            enc: PackedLstm::zeros(alphabet, hidden),
            dec: PackedLstm::zeros(alphabet, hidden),
            pwt: vec![T::zero(); hidden * alphabet],
            pb: vec![T::zero(); alphabet],
        }
    }

    pub fn pack(p: &RedParams<T>) -> Self {
        let (a, h) = (p.proj_w.rows(), p.proj_w.cols());
        Self {
            enc: PackedLstm::pack(&p.encoder),
            dec: PackedLstm::pack(&p.decoder),
            pwt: transpose(p.proj_w.as_slice(), a, h),
            pb: p.proj_b.to_vec(),
        }
    }

    pub fn unpack(&self) -> RedParams<T> {
        let h = self.enc.hidden_dim;
        let a = self.pb.len();
        RedParams {
            encoder: self.enc.unpack(),
            decoder: self.dec.unpack(),
            proj_w: Matrix::from_vec(a, h, transpose(&self.pwt, h, a)).expect("consistent dims"),
            proj_b: Vector::from_slice(&self.pb),
        }
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn alphabet(&self) -> usize {
        self.pb.len()
    }

    fn hidden(&self) -> usize {
        self.enc.hidden_dim
    }
}

impl<T: Scalar> ParamSet<T> for PackedRed<T> {
    fn slices(&self) -> Vec<&[T]> {
        vec![
            &self.enc.wt,
            &self.enc.ut,
            &self.enc.b,
            &self.dec.wt,
            &self.dec.ut,
            &self.dec.b,
            &self.pwt,
            &self.pb,
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.enc.wt,
            &mut self.enc.ut,
            &mut self.enc.b,
            &mut self.dec.wt,
            &mut self.dec.ut,
            &mut self.dec.b,
            &mut self.pwt,
            &mut self.pb,
        ]
    }
}

/// Per-step activations of one LSTM over a batch.
#[derive(Debug, Default)]
struct StepCache<T> {
    /// B × 4H gate activations `[i | o | f | tanh candidate]`
    act: Vec<T>,
    c: Vec<T>,
    tc: Vec<T>,
    h: Vec<T>,
}

/// Packed model plus the transposes the backward pass needs and reusable
/// scratch buffers.
#[derive(Debug)]
pub struct BatchEngine<T> {
    pub params: PackedRed<T>,
    enc_u: Vec<T>,
    dec_u: Vec<T>,
    pw: Vec<T>,
    seq_len: usize,
    enc_steps: Vec<StepCache<T>>,
    dec_steps: Vec<StepCache<T>>,
    xs: Vec<Vec<T>>,
    probs: Vec<Vec<T>>,
}

impl<T: Scalar> BatchEngine<T> {
    pub fn new(model: &RedModel<T>) -> Self {
        let mut e = Self {
            params: PackedRed::pack(&model.params),
            enc_u: Vec::new(),
            dec_u: Vec::new(),
            pw: Vec::new(),
            seq_len: model.seq_len,
            enc_steps: Vec::new(),
            dec_steps: Vec::new(),
            xs: Vec::new(),
            probs: Vec::new(),
        };
        e.refresh();
        e
    }

    /// Recomputes the cached transposes. Call after every parameter update.
    pub fn refresh(&mut self) {
        self.enc_u = self.params.enc.u_rows();
        self.dec_u = self.params.dec.u_rows();
        self.pw = transpose(
            &self.params.pwt,
            self.params.hidden(),
            self.params.alphabet(),
        );
    }

    /// Writes the packed parameters back into `model`.
    pub fn store(&self, model: &mut RedModel<T>) {
        model.params = self.params.unpack();
    }

    fn ensure_buffers(&mut self, rows: usize) {
        let h = self.params.hidden();
        let a = self.params.alphabet();
        let l = self.seq_len;
        let resize = |steps: &mut Vec<StepCache<T>>| {
            steps.resize_with(l, StepCache::default);
            for s in steps.iter_mut() {
                s.act.resize(rows * 4 * h, T::zero());
                s.c.resize(rows * h, T::zero());
                s.tc.resize(rows * h, T::zero());
                s.h.resize(rows * h, T::zero());
            }
        };
        resize(&mut self.enc_steps);
        resize(&mut self.dec_steps);
        self.xs.resize_with(l, Vec::new);
        self.probs.resize_with(l, Vec::new);
        for x in self.xs.iter_mut() {
            x.resize(rows * a, T::zero());
        }
        for p in self.probs.iter_mut() {
            p.resize(rows * a, T::zero());
        }
    }

    /// One LSTM step for `rows` windows. `x = None` means zero input and
    /// `prev = None` a zero previous state.
    #[allow(clippy::too_many_arguments)]
    fn lstm_step(
        p: &PackedLstm<T>,
        rows: usize,
        x: Option<&[T]>,
        prev: Option<(&[T], &[T])>,
        out: &mut StepCache<T>,
    ) {
        let h = p.hidden_dim;
        let g4 = 4 * h;
        let z = &mut out.act[..rows * g4];
        for r in 0..rows {
            z[r * g4..(r + 1) * g4].copy_from_slice(&p.b);
        }
        if let Some(x) = x {
            input_product(rows, p.input_dim, g4, x, &p.wt, z);
        }
        if let Some((h_prev, _)) = prev {
            gemm_acc(rows, g4, h, h_prev, h, 1, &p.ut, z);
        }
        for r in 0..rows {
            let zr = &mut z[r * g4..(r + 1) * g4];
            sigmoid_in_place(&mut zr[..3 * h]);
            tanh_in_place(&mut zr[3 * h..]);
            let (i, rest) = zr.split_at(h);
            let (o, rest) = rest.split_at(h);
            let (f, g) = rest.split_at(h);
            let c = &mut out.c[r * h..(r + 1) * h];
            match prev {
                Some((_, c_prev)) => {
                    for k in 0..h {
                        c[k] = f[k] * c_prev[r * h + k] + i[k] * g[k];
                    }
                }
                None => {
                    for k in 0..h {
                        c[k] = i[k] * g[k];
                    }
                }
            }
            let tc = &mut out.tc[r * h..(r + 1) * h];
            tc.copy_from_slice(c);
            tanh_in_place(tc);
            let hr = &mut out.h[r * h..(r + 1) * h];
            for k in 0..h {
                hr[k] = o[k] * tc[k];
            }
        }
    }

    /// Forward pass over `windows`, filling the caches. Returns the number of rows.
    fn forward(&mut self, windows: &[&SequencePair<T>]) -> Result<usize> {
        let rows = windows.len();
        let a = self.params.alphabet();
        let l = self.seq_len;
        for w in windows {
            check_dim("batched window input length", l, w.x.len())?;
            check_dim("batched window target length", l, w.y.len())?;
        }
        self.ensure_buffers(rows);
        for t in 0..l {
            for (r, w) in windows.iter().enumerate() {
                check_dim("batched input width", a, w.x[t].len())?;
                self.xs[t][r * a..(r + 1) * a].copy_from_slice(&w.x[t]);
            }
        }
        for t in 0..l {
            let (done, rest) = self.enc_steps.split_at_mut(t);
            let prev = done.last().map(|s| (&s.h[..], &s.c[..]));
            Self::lstm_step(
                &self.params.enc,
                rows,
                Some(&self.xs[t]),
                prev,
                &mut rest[0],
            );
        }
        let last = self.enc_steps.last().expect("seq_len >= 1");
        let h = self.params.hidden();
        for t in 0..l {
            let (done, rest) = self.dec_steps.split_at_mut(t);
            let prev = match done.last() {
                Some(s) => (&s.h[..], &s.c[..]),
                None => (&last.h[..], &last.c[..]),
            };
            Self::lstm_step(&self.params.dec, rows, None, Some(prev), &mut rest[0]);
            let probs = &mut self.probs[t][..rows * a];
            for r in 0..rows {
                probs[r * a..(r + 1) * a].copy_from_slice(&self.params.pb);
            }
            gemm_acc(rows, a, h, &rest[0].h, h, 1, &self.params.pwt, probs);
            for r in 0..rows {
                crate::numerics::softmax_into(
                    &probs[r * a..(r + 1) * a].to_vec(),
                    &mut probs[r * a..(r + 1) * a],
                );
            }
        }
        Ok(rows)
    }

    /// Per-window losses without gradients.
    pub fn losses(&mut self, windows: &[&SequencePair<T>]) -> Result<Vec<T>> {
        let rows = self.forward(windows)?;
        Ok(self.window_losses(windows, rows))
    }

    /// Per-window loss and argmax-decoded output symbols.
    pub fn evaluate(&mut self, windows: &[&SequencePair<T>]) -> Result<Vec<(T, Vec<usize>)>> {
        let rows = self.forward(windows)?;
        let a = self.params.alphabet();
        let losses = self.window_losses(windows, rows);
        Ok(losses
            .into_iter()
            .enumerate()
            .map(|(r, loss)| {
                let decoded = (0..self.seq_len)
                    .map(|t| argmax(&self.probs[t][r * a..(r + 1) * a]))
                    .collect();
                (loss, decoded)
            })
            .collect())
    }

    fn window_losses(&self, windows: &[&SequencePair<T>], rows: usize) -> Vec<T> {
        let a = self.params.alphabet();
        (0..rows)
            .map(|r| {
                (0..self.seq_len)
                    .map(|t| {
                        crate::numerics::cross_entropy(
                            &self.probs[t][r * a..(r + 1) * a],
                            &windows[r].y[t],
                        )
                    })
                    .fold(T::zero(), |s, v| s + v)
            })
            .collect()
    }

    /// Forward and backward over `windows`; adds `Σ_r weight_r · ∂loss_r/∂θ`
    /// into `grads` and returns the per-window losses.
    pub fn forward_backward(
        &mut self,
        windows: &[&SequencePair<T>],
        weights: &[T],
        grads: &mut PackedRed<T>,
    ) -> Result<Vec<T>> {
        check_dim("batched weights", windows.len(), weights.len())?;
        let rows = self.forward(windows)?;
        let losses = self.window_losses(windows, rows);
        let h = self.params.hidden();
        let a = self.params.alphabet();
        let g4 = 4 * h;
        let l = self.seq_len;

        let mut dz = vec![T::zero(); rows * g4];
        let mut dlogits = vec![T::zero(); rows * a];
        let mut dh_ext = vec![T::zero(); rows * h];
        let mut dh_next = vec![T::zero(); rows * h];
        let mut dc_next = vec![T::zero(); rows * h];
        let mut dh_tmp = vec![T::zero(); rows * h];

        for t in (0..l).rev() {
            let step = &self.dec_steps[t];
            for r in 0..rows {
                let y = &windows[r].y[t];
                let mass: T = y.iter().copied().fold(T::zero(), |s, v| s + v);
                let p = &self.probs[t][r * a..(r + 1) * a];
                for k in 0..a {
                    dlogits[r * a + k] = weights[r] * (p[k] * mass - y[k]);
                }
            }
            // projection gradients
            gemm_acc(h, a, rows, &step.h, 1, h, &dlogits, &mut grads.pwt);
            for r in 0..rows {
                for k in 0..a {
                    grads.pb[k] = grads.pb[k] + dlogits[r * a + k];
                }
            }
            dh_ext.iter_mut().for_each(|v| *v = T::zero());
            gemm_acc(rows, h, a, &dlogits, a, 1, &self.pw, &mut dh_ext);

            let (h_prev, c_prev) = if t > 0 {
                (&self.dec_steps[t - 1].h, &self.dec_steps[t - 1].c)
            } else {
                let e = &self.enc_steps[l - 1];
                (&e.h, &e.c)
            };
            gate_grads(
                rows,
                h,
                step,
                c_prev,
                Some(&dh_ext),
                &dh_next,
                &mut dc_next,
                &mut dz,
            );
            gemm_acc(h, g4, rows, h_prev, 1, h, &dz, &mut grads.dec.ut);
            col_sum_acc(rows, g4, &dz, &mut grads.dec.b);
            dh_tmp.iter_mut().for_each(|v| *v = T::zero());
            gemm_acc(rows, h, g4, &dz, g4, 1, &self.dec_u, &mut dh_tmp);
            std::mem::swap(&mut dh_next, &mut dh_tmp);
        }

        // dh_next, dc_next now hold the gradient at the state handoff.
        for t in (0..l).rev() {
            let step = &self.enc_steps[t];
            let zeros_c;
            let c_prev: &[T] = if t > 0 {
                &self.enc_steps[t - 1].c
            } else {
                zeros_c = vec![T::zero(); rows * h];
                &zeros_c
            };
            gate_grads(rows, h, step, c_prev, None, &dh_next, &mut dc_next, &mut dz);
            input_grad(rows, a, g4, &self.xs[t], &dz, &mut grads.enc.wt);
            col_sum_acc(rows, g4, &dz, &mut grads.enc.b);
            if t > 0 {
                gemm_acc(
                    h,
                    g4,
                    rows,
                    &self.enc_steps[t - 1].h,
                    1,
                    h,
                    &dz,
                    &mut grads.enc.ut,
                );
                dh_tmp.iter_mut().for_each(|v| *v = T::zero());
                gemm_acc(rows, h, g4, &dz, g4, 1, &self.enc_u, &mut dh_tmp);
                std::mem::swap(&mut dh_next, &mut dh_tmp);
            }
        }
        Ok(losses)
    }
}

fn col_sum_acc<T: Scalar>(rows: usize, n: usize, m: &[T], out: &mut [T]) {
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&m[r * n..(r + 1) * n]) {
            *o = *o + v;
        }
    }
}

/// Gate pre-activation gradients for one step. Updates `dc` in place from
/// `dc_{t}` to `dc_{t-1}`.
#[allow(clippy::too_many_arguments)]
fn gate_grads<T: Scalar>(
    rows: usize,
    h: usize,
    step: &StepCache<T>,
    c_prev: &[T],
    dh_ext: Option<&[T]>,
    dh_next: &[T],
    dc: &mut [T],
    dz: &mut [T],
) {
    let g4 = 4 * h;
    let one = T::one();
    for r in 0..rows {
        let act = &step.act[r * g4..(r + 1) * g4];
        let (i, rest) = act.split_at(h);
        let (o, rest) = rest.split_at(h);
        let (f, g) = rest.split_at(h);
        let dzr = &mut dz[r * g4..(r + 1) * g4];
        let (dzi, rest) = dzr.split_at_mut(h);
        let (dzo, rest) = rest.split_at_mut(h);
        let (dzf, dzg) = rest.split_at_mut(h);
        let span = r * h..(r + 1) * h;
        let tc = &step.tc[span.clone()];
        let cp = &c_prev[span.clone()];
        let dhn = &dh_next[span.clone()];
        let ext = dh_ext.map(|e| &e[span.clone()]);
        let dc = &mut dc[span];
        for k in 0..h {
            let dh = match ext {
                Some(e) => e[k] + dhn[k],
                None => dhn[k],
            };
            let dcv = dc[k] + dh * o[k] * (one - tc[k] * tc[k]);
            dzi[k] = dcv * g[k] * i[k] * (one - i[k]);
            dzo[k] = dh * tc[k] * o[k] * (one - o[k]);
            dzf[k] = dcv * cp[k] * f[k] * (one - f[k]);
            dzg[k] = dcv * i[k] * (one - g[k] * g[k]);
            dc[k] = dcv * f[k];
        }
    }
}
