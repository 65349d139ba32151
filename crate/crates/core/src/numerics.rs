//! Dense vectors and matrices, activations, loss primitives and the seeded
//! random source shared by the rest of the crate.
//!
//! Everything here is generic over [`Scalar`], implemented for `f32` and
//! `f64`. The experiments run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Result};

/// Floating-point element type of every array in the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + FromStr<Err = ParseFloatError>
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant. Never fails for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// `exp` written without calls or branches so loops over it vectorize.
    /// Within a couple of ulps of `exp`; NaN propagates.
    #[inline(always)]
    fn vexp(self) -> Self {
        self.exp()
    }

    /// `a·b + c`, fused when the target has FMA.
    #[inline(always)]
    fn madd(a: Self, b: Self, c: Self) -> Self {
        if cfg!(target_feature = "fma") {
            a.mul_add(b, c)
        } else {
            a * b + c
        }
    }
}

impl Scalar for f32 {}

impl Scalar for f64 {
    #[inline(always)]
    fn vexp(self) -> f64 {
        // 1.5·2^52: adding it rounds to an integer held in the low mantissa bits.
        const SHIFTER: f64 = 6755399441055744.0;
        const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
        const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
        const TAYLOR: [f64; 14] = [
            1.0 / 6_227_020_800.0,
            1.0 / 479_001_600.0,
            1.0 / 39_916_800.0,
            1.0 / 3_628_800.0,
            1.0 / 362_880.0,
            1.0 / 40_320.0,
            1.0 / 5_040.0,
            1.0 / 720.0,
            1.0 / 120.0,
            1.0 / 24.0,
            1.0 / 6.0,
            0.5,
            1.0,
            1.0,
        ];
        #[allow(clippy::manual_clamp)]
        let x = if self < -708.0 {
            -708.0
        } else if self > 709.0 {
            709.0
        } else {
            self
        };
        let k = x * std::f64::consts::LOG2_E + SHIFTER;
        let n = k - SHIFTER;
        let r = x - n * LN2_HI - n * LN2_LO;
        let mut p = TAYLOR[0];
        for &c in &TAYLOR[1..] {
            p = p * r + c;
        }
        let scale = f64::from_bits(
            k.to_bits()
                .wrapping_sub(SHIFTER.to_bits())
                .wrapping_add(1023)
                << 52,
        );
        p * scale
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Floor applied to probabilities inside [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            data: vec![T::zero(); n],
        }
    }

    pub fn from_slice(values: &[T]) -> Self {
        Self {
            data: values.to_vec(),
        }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        values.iter().map(|&v| T::lit(v)).collect()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn norm_sq(&self) -> T {
        dot(&self.data, &self.data)
    }

    /// Index of the largest entry; the lowest index wins exact ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

impl<T> From<Vec<T>> for Vector<T> {
    fn from(data: Vec<T>) -> Self {
        Self { data }
    }
}

impl<T> FromIterator<T> for Vector<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        Self {
            data: iter.into_iter().collect(),
        }
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> DerefMut for Vector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m.data[k * n + k] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `out += self · x`
    pub(crate) fn matvec_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = *o + dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · y`
    pub(crate) fn matvec_t_acc(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if !yr.is_zero() {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += alpha · y xᵀ`
    pub(crate) fn outer_acc(&mut self, alpha: T, y: &[T], x: &[T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            let a = alpha * yr;
            if !a.is_zero() {
                axpy(a, x, self.row_mut(r));
            }
        }
    }
}

/// A fixed-order collection of parameter arrays, flattened for optimizers
/// and gradient checks.
pub trait ParamSet<T> {
    fn slices(&self) -> Vec<&[T]>;
    fn slices_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

impl<T> ParamSet<T> for Vec<T> {
    fn slices(&self) -> Vec<&[T]> {
        vec![self.as_slice()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}

const LANES: usize = 8;

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] = acc[k] + xa[k] * xb[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    let mut s = T::zero();
    for v in acc {
        s = s + v;
    }
    s + tail
}

/// `y += alpha · x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Pre-activation `W x + U h + b`.
pub fn affine<T: Scalar>(
    w: &Matrix<T>,
    x: &[T],
    u: &Matrix<T>,
    h: &[T],
    b: &[T],
) -> Result<Vector<T>> {
    check_dim("affine: W.cols vs |x|", w.cols(), x.len())?;
    check_dim("affine: U.cols vs |h|", u.cols(), h.len())?;
    check_dim("affine: W.rows vs |b|", b.len(), w.rows())?;
    check_dim("affine: U.rows vs |b|", b.len(), u.rows())?;
    let mut out = Vector::from_slice(b);
    w.matvec_acc(x, &mut out);
    u.matvec_acc(h, &mut out);
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Sigmoid via [`Scalar::vexp`]; absolute error ~1 ulp of 1.
#[inline(always)]
pub(crate) fn sigmoid_fast<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).vexp())
}

/// `tanh` via [`Scalar::vexp`]; absolute (not relative) error ~1 ulp of 1.
#[inline(always)]
pub(crate) fn tanh_fast<T: Scalar>(x: T) -> T {
    let e = (T::lit(-2.0) * x.abs()).vexp();
    ((T::one() - e) / (T::one() + e)).copysign(x)
}

pub fn sigmoid<T: Scalar>(v: &[T]) -> Vector<T> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh_vec<T: Scalar>(v: &[T]) -> Vector<T> {
    v.iter().map(|&x| x.tanh()).collect()
}

/// Max-shifted softmax. `logits` must be nonempty.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vector<T> {
    let mut out = Vector::zeros(logits.len());
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum = sum + *o;
    }
    let inv = T::one() / sum;
    out.iter_mut().for_each(|o| *o = *o * inv);
}

/// `-Σ target_k · ln(max(p_k, 1e-12))`
pub fn cross_entropy<T: Scalar>(p: &[T], target: &[T]) -> T {
    debug_assert_eq!(p.len(), target.len());
    let floor = T::lit(PROB_FLOOR);
    let mut loss = T::zero();
    for (&pk, &tk) in p.iter().zip(target) {
        if !tk.is_zero() {
            loss = loss - tk * pk.max(floor).ln();
        }
    }
    loss
}

/// Seeded deterministic random source (ChaCha8 stream).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_gaussian: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal draw via Box-Muller; the second value of each pair is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.inner);
    }
}

/// Derives an independent seed from a base seed and a path of labels (SplitMix64 mixing).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Matrix with entries uniform in `[-scale, scale)`.
pub fn rand_matrix<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
    assert!(scale > 0.0, "rand_matrix scale must be positive");
    let data = (0..rows * cols)
        .map(|_| T::lit(scale * (2.0 * rng.uniform() - 1.0)))
        .collect();
    Matrix { rows, cols, data }
}

/// Zero-mean Gaussian vector with standard deviation `sigma`.
pub fn rand_gaussian<T: Scalar>(rng: &mut Rng, n: usize, sigma: f64) -> Vector<T> {
    assert!(sigma >= 0.0, "rand_gaussian sigma must be non-negative");
    (0..n).map(|_| T::lit(sigma * rng.gaussian())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_affine(w: &Matrix<f64>, x: &[f64], u: &Matrix<f64>, h: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; b.len()];
        for r in 0..b.len() {
            let mut s = b[r];
            for k in 0..x.len() {
                s += w.get(r, k) * x[k];
            }
            for k in 0..h.len() {
                s += u.get(r, k) * h[k];
            }
            out[r] = s;
        }
        out
    }

    #[test]
    fn affine_zero_weights_pass_bias() {
        let w = Matrix::<f64>::zeros(2, 3);
        let u = Matrix::<f64>::zeros(2, 2);
        let out = affine(&w, &[0.3, -1.0, 2.0], &u, &[5.0, 6.0], &[1.0, 2.0]).unwrap();
        assert_eq!(&*out, &[1.0, 2.0]);
    }

    #[test]
    fn affine_identity_case() {
        let i = Matrix::<f64>::identity(2);
        let out = affine(&i, &[1.0, 0.0], &i, &[0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(&*out, &[1.0, 1.0]);
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let w = rand_matrix::<f64>(&mut rng, 3, 3, 1.0);
        let u = rand_matrix::<f64>(&mut rng, 3, 3, 1.0);
        let x = rand_gaussian::<f64>(&mut rng, 3, 1.0);
        let h = rand_gaussian::<f64>(&mut rng, 3, 1.0);
        let b = rand_gaussian::<f64>(&mut rng, 3, 1.0);
        let got = affine(&w, &x, &u, &h, &b).unwrap();
        for (g, e) in got.iter().zip(naive_affine(&w, &x, &u, &h, &b)) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_rejects_bad_dims() {
        let w = Matrix::<f64>::zeros(2, 3);
        let u = Matrix::<f64>::zeros(2, 2);
        assert!(affine(&w, &[0.0; 2], &u, &[0.0; 2], &[0.0; 2]).is_err());
        assert!(affine(&w, &[0.0; 3], &u, &[0.0; 3], &[0.0; 2]).is_err());
        assert!(affine(&w, &[0.0; 3], &u, &[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn dot_matches_naive_for_odd_lengths() {
        let mut rng = Rng::new(1);
        for n in [0, 1, 7, 8, 9, 17, 64, 65] {
            let a = rand_gaussian::<f64>(&mut rng, n, 1.0);
            let b = rand_gaussian::<f64>(&mut rng, n, 1.0);
            let naive: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_tanh_analytic_points() {
        assert_eq!(sigmoid(&[0.0f64])[0], 0.5);
        assert_eq!(tanh_vec(&[0.0f64])[0], 0.0);
        for x in [0.5f64, 3.0, 10.0] {
            let s = sigmoid(&[x, -x]);
            assert!((s[1] - (1.0 - s[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        // exp(-|x|) branch oracle
        let oracle = |x: f64| {
            let e = (-x.abs()).exp();
            if x >= 0.0 {
                1.0 / (1.0 + e)
            } else {
                e / (1.0 + e)
            }
        };
        for x in [100.0f64, -100.0, 800.0, -800.0] {
            let s = sigmoid_scalar(x);
            assert!(s.is_finite());
            assert!((s - oracle(x)).abs() < 1e-12);
        }
        assert!((sigmoid_scalar(100.0f64) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let p = softmax(&[0.0f64, 0.0, 0.0]);
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1000.0f64, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_naive_oracle() {
        let mut rng = Rng::new(11);
        let v = rand_gaussian::<f64>(&mut rng, 15, 3.0);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let p = softmax(&v);
        for (a, e) in p.iter().zip(exps) {
            assert!((a - e / total).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut onehot = vec![0.0f64; 15];
        onehot[4] = 1.0;
        assert!(cross_entropy(&onehot, &onehot) <= 1e-11);
        let uniform = vec![1.0 / 15.0; 15];
        assert!((cross_entropy(&uniform, &onehot) - 15f64.ln()).abs() < 1e-12);
        assert!((15f64.ln() - 2.70805).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let mut rng = Rng::new(3);
        let logits = rand_gaussian::<f64>(&mut rng, 6, 2.0);
        let p = softmax(&logits);
        let t: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let mut expected = 0.0;
        for k in 0..6 {
            expected -= t[k] * p[k].max(1e-12).ln();
        }
        assert!((cross_entropy(&p, &t) - expected).abs() < 1e-12);
    }

    #[test]
    fn rng_determinism_and_zero_sigma() {
        let a = rand_gaussian::<f64>(&mut Rng::new(5), 50, 0.3);
        let b = rand_gaussian::<f64>(&mut Rng::new(5), 50, 0.3);
        assert_eq!(a, b);
        let m1 = rand_matrix::<f64>(&mut Rng::new(5), 4, 4, 0.5);
        let m2 = rand_matrix::<f64>(&mut Rng::new(5), 4, 4, 0.5);
        assert_eq!(m1, m2);
        assert!(m1.max_abs() <= 0.5);
        assert!(rand_gaussian::<f64>(&mut Rng::new(9), 10, 0.0).is_zero());
    }

    #[test]
    fn gaussian_sample_std() {
        let v = rand_gaussian::<f64>(&mut Rng::new(2024), 100_000, 0.2);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01);
        assert!((var.sqrt() - 0.2).abs() < 0.01);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let v = Vector::from_slice(&[0.2f64, 0.5, 0.5, 0.1]);
        assert_eq!(v.argmax(), 1);
        assert_eq!(Vector::<f64>::zeros(4).argmax(), 0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(9, &[4]), derive_seed(9, &[4]));
    }

    #[test]
    fn generic_over_f32() {
        let p = softmax(&[1.0f32, 2.0, 3.0]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(v in proptest::collection::vec(-1000.0f64..1000.0, 1..20)) {
                let p = softmax(&v);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn softmax_shift_invariant(v in proptest::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
                let p = softmax(&v);
                let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
                let q = softmax(&shifted);
                for (a, b) in p.iter().zip(q.iter()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn cross_entropy_nonnegative_on_onehot(v in proptest::collection::vec(-20.0f64..20.0, 2..16), hot in 0usize..16) {
                let p = softmax(&v);
                let mut t = vec![0.0; v.len()];
                t[hot % v.len()] = 1.0;
                prop_assert!(cross_entropy(&p, &t) >= 0.0);
            }

            #[test]
            fn sigmoid_in_unit_interval(x in -30.0f64..30.0) {
                let s = sigmoid_scalar(x);
                prop_assert!(s > 0.0 && s < 1.0);
                prop_assert!((sigmoid_scalar(-x) - (1.0 - s)).abs() < 1e-15);
            }
            #[test]
            fn vexp_matches_exp(x in -700.0f64..700.0) {
                let (a, b) = (x.vexp(), x.exp());
                prop_assert!(((a - b) / b).abs() < 5e-16, "{} vs {}", a, b);
            }

            #[test]
            fn fast_activations_match_std(x in -40.0f64..40.0) {
                prop_assert!((sigmoid_fast(x) - sigmoid_scalar(x)).abs() < 1e-15);
                prop_assert!((tanh_fast(x) - x.tanh()).abs() < 1e-15);
                prop_assert!(tanh_fast(x).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn vexp_edges() {
        assert_eq!(0.0f64.vexp(), 1.0);
        assert!(f64::NAN.vexp().is_nan());
        assert!((-1e4f64).vexp() < 1e-300);
        assert!(1e4f64.vexp() > 1e300);
        assert_eq!(sigmoid_fast(1e4f64), 1.0);
        assert_eq!(tanh_fast(-1e4f64), -1.0);
        assert_eq!(1.5f32.vexp(), 1.5f32.exp());
    }
}
