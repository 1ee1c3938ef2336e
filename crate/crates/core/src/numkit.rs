//! Small deterministic numerical kernel shared by every task and trainer.
//!
//! Everything is `f64`. Randomness flows through [`Rng`], a ChaCha stream
//! keyed by a 64-bit seed, which can be split into labeled sub-streams so
//! that data synthesis, model initialization and controller sampling never
//! share draws.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Mat::from_vec", rows * cols, data.len())?;
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), &mut out);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::InvalidArgument(format!("clip bounds {lo} > {hi}")));
    }
    Ok(x.max(lo).min(hi))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `log softmax(logits)`, computed through log-sum-exp so it stays finite
/// for finite logits.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log_softmax logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&l| l - lse).collect())
}

fn validate_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidSimplex("empty".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidSimplex(format!("negative or non-finite entry in {probs:?}")));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSimplex(format!("sums to {s}")));
    }
    Ok(())
}

pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> Result<usize> {
    validate_simplex(probs)?;
    let u = rng.next_f64();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc && p > 0.0 {
            return Ok(i);
        }
    }
    // rounding left u just above the cumulative sum
    Ok(last_positive)
}

/// Exponential moving average: `decay * prev + (1 - decay) * new`.
pub fn ema_update(prev: f64, new: f64, decay: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("ema decay {decay} outside [0, 1)")));
    }
    Ok(decay * prev + (1.0 - decay) * new)
}

/// Seeded random stream. Sub-streams derived with [`Rng::split`] depend only
/// on the parent's seed and the label, never on how much of the parent has
/// been consumed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, label: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(fnv1a(label))))
    }

    pub fn split_indexed(&self, label: &str, index: u64) -> Rng {
        self.split(label).split(&index.to_string())
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen::<u64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn gauss(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn gauss_vec(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        (0..n).map(|_| self.gauss(mean, std)).collect()
    }
}

/// Bias-corrected Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One Adam descent step: `params -= lr * m̂ / (sqrt(v̂) + eps)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    check_dim("adam_step params", state.len(), params.len())?;
    let mut delta = vec![0.0; params.len()];
    adam_delta(grads, state, &mut delta)?;
    for (p, d) in params.iter_mut().zip(&delta) {
        *p -= d;
    }
    Ok(())
}

/// Advance the moments with `grads` and write the step `lr * m̂ / (sqrt(v̂) + eps)`
/// into `delta` without touching any parameters.
pub fn adam_delta(grads: &[f64], state: &mut AdamState, delta: &mut [f64]) -> Result<()> {
    check_dim("adam_delta grads", state.len(), grads.len())?;
    check_dim("adam_delta output", state.len(), delta.len())?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        delta[i] = state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 1000.0, 1000.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn log_softmax_never_neg_inf_for_finite_logits() {
        let l = log_softmax(&[0.0, -2000.0]).unwrap();
        assert!(l[1].is_finite());
        assert!((l[1] + 2000.0).abs() < 1e-9);
    }

    #[test]
    fn categorical_degenerate_and_invalid() {
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
            assert_eq!(sample_categorical(&[0.0, 0.0, 1.0], &mut rng).unwrap(), 2);
        }
        assert!(sample_categorical(&[0.5, 0.6], &mut rng).is_err());
        assert!(sample_categorical(&[1.5, -0.5], &mut rng).is_err());
        assert!(sample_categorical(&[], &mut rng).is_err());
    }

    #[test]
    fn categorical_fair_coin_frequency() {
        let mut rng = Rng::new(11);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_categorical(&[0.5, 0.5], &mut rng).unwrap() == 0)
            .count();
        let f = zeros as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn categorical_chi_square_goodness_of_fit() {
        let probs = [0.2, 0.3, 0.5];
        let mut rng = Rng::new(12);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical(&probs, &mut rng).unwrap()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square with 2 dof: P(X > 13.8155) = 0.001
        assert!(chi2 < 13.8155, "chi2 = {chi2}");
    }

    #[test]
    fn ema_examples() {
        assert!((ema_update(0.0, 1.0, 0.9).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(ema_update(5.0, 5.0, 0.37).unwrap(), 5.0);
        assert!(ema_update(0.0, 1.0, 1.0).is_err());
        assert!(ema_update(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn ema_geometric_closed_form() {
        let (eta, r, b0) = (0.9, 3.5, 1.25);
        let mut b = b0;
        for h in 1..=200 {
            b = ema_update(b, r, eta).unwrap();
            let closed = eta_pow(eta, h) * b0 + (1.0 - eta_pow(eta, h)) * r;
            assert!((b - closed).abs() < 1e-12, "h={h}");
        }
    }

    fn eta_pow(eta: f64, h: i32) -> f64 {
        eta.powi(h)
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, 0.01);
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = vec![0.0; 4];
        let mut st = AdamState::new(4, 0.05);
        st.eps = 0.0;
        adam_step(&mut p, &[3.0, -0.001, 1e4, -7.0], &mut st).unwrap();
        for (pi, g) in p.iter().zip([3.0, -0.001, 1e4, -7.0f64]) {
            assert!((pi.abs() - 0.05).abs() < 1e-12);
            assert_eq!(pi.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut x = vec![1.0];
        let mut st = AdamState::new(1, 0.01);
        for _ in 0..500 {
            let g = vec![2.0 * x[0]];
            adam_step(&mut x, &g, &mut st).unwrap();
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(2, 0.01);
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut st).is_err());
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut st).is_err());
    }

    #[test]
    fn small_helpers() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(clip(2.5, -1.0, 1.0).unwrap(), 1.0);
        assert!(clip(0.0, 1.0, -1.0).is_err());
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn uniform_mean_within_clt_bound() {
        let mut rng = Rng::new(5);
        let xs = rng.uniform_vec(100_000, -0.5, 0.5);
        assert!(mean(&xs).abs() < 0.01);
    }

    #[test]
    fn split_streams_are_reproducible_and_distinct() {
        let root = Rng::new(42);
        let mut a = root.split("data");
        let mut b = Rng::new(42).split("data");
        let mut c = root.split("model");
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        // consuming the parent does not change its children
        let mut consumed = Rng::new(42);
        consumed.next_u64();
        assert_eq!(consumed.split("data").next_u64(), Rng::new(42).split("data").next_u64());
    }

    #[test]
    fn mat_products() {
        let m = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert!(Mat::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
