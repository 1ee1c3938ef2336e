//! Task models for the supervised processes: the d-ary quadratic regressor
//! and the binary ReLU MLP classifier, with hand-derived gradients.

use crate::numkit::{self, relu, sigmoid, softplus, Rng};
use crate::tasks::data::SupervisedDataset;

/// A model whose parameters form a single group `θ`.
pub trait SupervisedModel: Clone + Send + Sync {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Mean task loss over `idx`; when `grad` is given, the mean gradient is
    /// written into it (overwriting).
    fn task_loss(&self, data: &SupervisedDataset, idx: &[usize], grad: Option<&mut [f64]>) -> f64;
    /// Held-out metric: MSE for regression, 0.5-threshold error for classification.
    fn metric(&self, data: &SupervisedDataset, idx: &[usize]) -> f64;

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// `f(u) = uᵀAu + bᵀu + c`; parameters laid out as `[A (row-major), b, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    d: usize,
    params: Vec<f64>,
}

impl RegressionModel {
    pub fn zeros(d: usize) -> Self {
        RegressionModel {
            d,
            params: vec![0.0; d * d + d + 1],
        }
    }

    /// Small uniform initialization in `±scale`.
    pub fn init(d: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(d);
        for v in &mut m.params {
            *v = rng.uniform(-scale, scale);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn a(&self) -> &[f64] {
        &self.params[..self.d * self.d]
    }

    pub fn b(&self) -> &[f64] {
        &self.params[self.d * self.d..self.d * self.d + self.d]
    }

    pub fn c(&self) -> f64 {
        self.params[self.d * self.d + self.d]
    }

    pub fn set_linear(&mut self, b: &[f64], c: f64) {
        let d = self.d;
        self.params[d * d..d * d + d].copy_from_slice(b);
        self.params[d * d + d] = c;
    }

    pub fn predict(&self, u: &[f64]) -> f64 {
        let d = self.d;
        let a = &self.params[..d * d];
        let mut quad = 0.0;
        for i in 0..d {
            quad += u[i] * numkit::dot(&a[i * d..(i + 1) * d], u);
        }
        quad + numkit::dot(self.b(), u) + self.c()
    }
}

impl SupervisedModel for RegressionModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn task_loss(&self, data: &SupervisedDataset, idx: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let d = self.d;
        let n = idx.len() as f64;
        let mut sse = 0.0;
        match grad {
            None => {
                for &i in idx {
                    let e = self.predict(data.input(i)) - data.targets[i];
                    sse += e * e;
                }
            }
            Some(g) => {
                g.iter_mut().for_each(|v| *v = 0.0);
                for &i in idx {
                    let u = data.input(i);
                    let e = self.predict(u) - data.targets[i];
                    sse += e * e;
                    let s = 2.0 * e / n;
                    for r in 0..d {
                        let coef = s * u[r];
                        numkit::axpy(coef, u, &mut g[r * d..(r + 1) * d]);
                    }
                    numkit::axpy(s, u, &mut g[d * d..d * d + d]);
                    g[d * d + d] += s;
                }
            }
        }
        sse / n
    }

    fn metric(&self, data: &SupervisedDataset, idx: &[usize]) -> f64 {
        self.task_loss(data, idx, None)
    }
}

/// `d → h1 → h2 → 1` with ReLU hidden layers and a sigmoid output.
/// Layout: `[W1 (h1×d), b1, W2 (h2×h1), b2, w3 (h2), b3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    d: usize,
    h1: usize,
    h2: usize,
    params: Vec<f64>,
}

struct MlpOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl MlpModel {
    pub fn new(d: usize, h1: usize, h2: usize, rng: &mut Rng) -> Self {
        let n = h1 * d + h1 + h2 * h1 + h2 + h2 + 1;
        let mut m = MlpModel {
            d,
            h1,
            h2,
            params: vec![0.0; n],
        };
        let o = m.offsets();
        let init = |p: &mut [f64], fan_in: usize, rng: &mut Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            p.iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        };
        init(&mut m.params[o.w1..o.b1], d, rng);
        init(&mut m.params[o.w2..o.b2], h1, rng);
        init(&mut m.params[o.w3..o.b3], h2, rng);
        m
    }

    fn offsets(&self) -> MlpOffsets {
        let w1 = 0;
        let b1 = w1 + self.h1 * self.d;
        let w2 = b1 + self.h1;
        let b2 = w2 + self.h2 * self.h1;
        let w3 = b2 + self.h2;
        let b3 = w3 + self.h2;
        MlpOffsets { w1, b1, w2, b2, w3, b3 }
    }

    fn forward(&self, u: &[f64], z1: &mut [f64], z2: &mut [f64]) -> f64 {
        let o = self.offsets();
        let p = &self.params;
        for j in 0..self.h1 {
            z1[j] = numkit::dot(&p[o.w1 + j * self.d..o.w1 + (j + 1) * self.d], u) + p[o.b1 + j];
        }
        for k in 0..self.h2 {
            let row = &p[o.w2 + k * self.h1..o.w2 + (k + 1) * self.h1];
            let mut acc = p[o.b2 + k];
            for j in 0..self.h1 {
                acc += row[j] * relu(z1[j]);
            }
            z2[k] = acc;
        }
        let mut z3 = p[o.b3];
        for k in 0..self.h2 {
            z3 += p[o.w3 + k] * relu(z2[k]);
        }
        z3
    }

    pub fn logit(&self, u: &[f64]) -> f64 {
        let mut z1 = vec![0.0; self.h1];
        let mut z2 = vec![0.0; self.h2];
        self.forward(u, &mut z1, &mut z2)
    }

    pub fn predict_proba(&self, u: &[f64]) -> f64 {
        sigmoid(self.logit(u))
    }
}

impl SupervisedModel for MlpModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn task_loss(&self, data: &SupervisedDataset, idx: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let n = idx.len() as f64;
        let mut z1 = vec![0.0; self.h1];
        let mut z2 = vec![0.0; self.h2];
        let mut total = 0.0;
        let o = self.offsets();
        let p = &self.params;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut d_a1 = vec![0.0; self.h1];
        for &i in idx {
            let u = data.input(i);
            let v = data.targets[i];
            let z3 = self.forward(u, &mut z1, &mut z2);
            // BCE with logits: softplus(z) - v z
            total += softplus(z3) - v * z3;
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            let dz3 = (sigmoid(z3) - v) / n;
            g[o.b3] += dz3;
            d_a1.iter_mut().for_each(|x| *x = 0.0);
            for k in 0..self.h2 {
                g[o.w3 + k] += dz3 * relu(z2[k]);
                if z2[k] <= 0.0 {
                    continue;
                }
                let dz2 = dz3 * p[o.w3 + k];
                g[o.b2 + k] += dz2;
                let row = o.w2 + k * self.h1;
                for j in 0..self.h1 {
                    g[row + j] += dz2 * relu(z1[j]);
                    d_a1[j] += dz2 * p[row + j];
                }
            }
            for j in 0..self.h1 {
                if z1[j] <= 0.0 || d_a1[j] == 0.0 {
                    continue;
                }
                g[o.b1 + j] += d_a1[j];
                numkit::axpy(d_a1[j], u, &mut g[o.w1 + j * self.d..o.w1 + (j + 1) * self.d]);
            }
        }
        total / n
    }

    fn metric(&self, data: &SupervisedDataset, idx: &[usize]) -> f64 {
        let mut z1 = vec![0.0; self.h1];
        let mut z2 = vec![0.0; self.h2];
        let wrong = idx
            .iter()
            .filter(|&&i| {
                let predicted = self.forward(data.input(i), &mut z1, &mut z2) > 0.0;
                predicted != (data.targets[i] > 0.5)
            })
            .count();
        wrong as f64 / idx.len() as f64
    }
}

/// `‖θ‖₁`, and its sub-gradient `sign(θ)` (0 at exact zeros) when requested.
pub fn l1_loss(params: &[f64], grad: Option<&mut [f64]>) -> f64 {
    if let Some(g) = grad {
        for (gi, p) in g.iter_mut().zip(params) {
            *gi = if *p > 0.0 {
                1.0
            } else if *p < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }
    params.iter().map(|p| p.abs()).sum()
}

/// Move every parameter toward zero by `step`, stopping at exactly zero.
pub fn l1_shrink(params: &mut [f64], step: f64) {
    for p in params.iter_mut() {
        if p.abs() <= step {
            *p = 0.0;
        } else {
            *p -= step * p.signum();
        }
    }
}
