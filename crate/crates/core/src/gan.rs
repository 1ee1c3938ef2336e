//! Desk-scale GAN process: a ring of Gaussians, small MLP generator and
//! discriminator with exact backprop, a proxy inception score computed from
//! the mixture's Bayes posterior, and the D-error feature.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::features::{extract_gan_features, HistoryCache, Quantity, GAN_FEATURE_DIM};
use crate::numkit::{self, softplus, AdamState, Mat, Rng};
use crate::sched::{Action, ActionSpace, EpisodeMode, TaskProcess};

pub const GEN_LOSS: usize = 0;
pub const DISC_LOSS: usize = 1;
const LOG_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-5;

/// Equal-weight isotropic Gaussians with means on a ring.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<[f64; 2]>,
    pub std: f64,
}

impl MixtureSpec {
    pub fn ring(k: usize, radius: f64, std: f64) -> Result<Self> {
        if k == 0 || !(std > 0.0) {
            return Err(Error::InvalidArgument("mixture needs components and a positive std".into()));
        }
        let means = (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Ok(MixtureSpec { means, std })
    }

    pub fn standard() -> Self {
        Self::ring(8, 2.0, 0.05).expect("valid ring")
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn sample(&self, rng: &mut Rng) -> [f64; 2] {
        let m = self.means[rng.below(self.k())];
        [rng.gauss(m[0], self.std), rng.gauss(m[1], self.std)]
    }

    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Mat {
        let mut out = Mat::zeros(n, 2);
        for i in 0..n {
            let p = self.sample(rng);
            out.row_mut(i).copy_from_slice(&p);
        }
        out
    }
}

/// Analytic posterior `p(component | x)` under the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyClassifier {
    mixture: MixtureSpec,
}

impl ProxyClassifier {
    pub fn new(mixture: MixtureSpec) -> Self {
        ProxyClassifier { mixture }
    }

    pub fn num_classes(&self) -> usize {
        self.mixture.k()
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.mixture.std * self.mixture.std);
        let logits: Vec<f64> = self
            .mixture
            .means
            .iter()
            .map(|m| -((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)) * inv)
            .collect();
        numkit::softmax(&logits).unwrap_or_else(|_| vec![1.0 / self.num_classes() as f64; self.num_classes()])
    }
}

/// `exp(mean_x KL(p(y|x) ‖ p̄))` over the rows of `samples`.
pub fn inception_score_of(samples: &Mat, classifier: &ProxyClassifier) -> f64 {
    let n = samples.rows();
    if n == 0 {
        return 1.0;
    }
    let k = classifier.num_classes();
    let posts: Vec<Vec<f64>> = (0..n).map(|i| classifier.posterior(samples.row(i))).collect();
    let mut mean = vec![0.0; k];
    for p in &posts {
        numkit::axpy(1.0 / n as f64, p, &mut mean);
    }
    let mut kl = 0.0;
    for p in &posts {
        for (pi, mi) in p.iter().zip(&mean) {
            // Terms this small contribute nothing but can underflow the mean.
            if *pi > 1e-300 && *mi > 0.0 {
                kl += pi * (pi.ln() - mi.ln());
            }
        }
    }
    (kl / n as f64).exp()
}

/// Proxy IS of `n_samples` fresh generator draws.
pub fn proxy_inception_score(model: &GanModel, n_samples: usize, classifier: &ProxyClassifier, rng: &mut Rng) -> f64 {
    let z = latent_batch(model.arch.dz, n_samples, rng);
    inception_score_of(&model.generator.forward(&z).output, classifier)
}

/// `C·IS²`.
pub fn gan_reward(is: f64, scale: f64) -> f64 {
    scale * is * is
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Leaky(f64),
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Leaky(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Leaky(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    *s
                }
            }
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::Leaky(s) => format!("leaky{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanArch {
    pub width: usize,
    pub dz: usize,
    pub activation: Activation,
    /// Standardize hidden pre-activations over the batch.
    pub norm: bool,
}

impl Default for GanArch {
    fn default() -> Self {
        GanArch {
            width: 64,
            dz: 4,
            activation: Activation::Relu,
            norm: false,
        }
    }
}

impl GanArch {
    pub fn tag(&self) -> String {
        format!(
            "w{}-z{}-{}-{}",
            self.width,
            self.dz,
            self.activation.tag(),
            if self.norm { "norm" } else { "nonorm" }
        )
    }
}

pub const ARCH_WIDTHS: [usize; 3] = [32, 64, 128];
pub const ARCH_LATENTS: [usize; 2] = [4, 8];

/// Every architecture of the sampling grid, in a fixed order.
pub fn architecture_grid() -> Vec<GanArch> {
    let mut out = Vec::with_capacity(24);
    for &width in &ARCH_WIDTHS {
        for &dz in &ARCH_LATENTS {
            for activation in [Activation::Relu, Activation::Leaky(0.2)] {
                for norm in [false, true] {
                    out.push(GanArch {
                        width,
                        dz,
                        activation,
                        norm,
                    });
                }
            }
        }
    }
    out
}

pub fn sample_gan_architecture(rng: &mut Rng) -> GanArch {
    let grid = architecture_grid();
    grid[rng.below(grid.len())]
}

/// Fully connected net with two hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: [usize; 4],
    activation: Activation,
    norm: bool,
    params: Vec<f64>,
}

/// Per-layer intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Mat,
    /// Pre-activations, after standardization when enabled.
    pre: Vec<Mat>,
    /// Batch standard deviations per hidden unit (norm only).
    stds: Vec<Vec<f64>>,
    acts: Vec<Mat>,
    pub output: Mat,
}

impl Mlp {
    pub fn new(sizes: [usize; 4], activation: Activation, norm: bool, rng: &mut Rng) -> Self {
        let n: usize = (0..3).map(|l| sizes[l] * sizes[l + 1] + sizes[l + 1]).sum();
        let mut mlp = Mlp {
            sizes,
            activation,
            norm,
            params: vec![0.0; n],
        };
        let mut off = 0;
        for l in 0..3 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut mlp.params[off..off + fan_in * fan_out] {
                *v = rng.uniform(-bound, bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    fn affine(&self, l: usize, input: &Mat) -> Mat {
        let (w, b) = self.layer_offsets(l);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let mut out = Mat::zeros(input.rows(), fan_out);
        for i in 0..input.rows() {
            let x = input.row(i);
            let row = out.row_mut(i);
            for j in 0..fan_out {
                row[j] = numkit::dot(&self.params[w + j * fan_in..w + (j + 1) * fan_in], x) + self.params[b + j];
            }
        }
        out
    }

    pub fn forward(&self, input: &Mat) -> ForwardCache {
        let mut pre = Vec::with_capacity(2);
        let mut stds = Vec::with_capacity(2);
        let mut acts = Vec::with_capacity(2);
        let mut h = input.clone();
        for l in 0..2 {
            let mut z = self.affine(l, &h);
            if self.norm {
                stds.push(standardize_columns(&mut z));
            }
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            pre.push(z);
            acts.push(a.clone());
            h = a;
        }
        let output = self.affine(2, &h);
        ForwardCache {
            input: input.clone(),
            pre,
            stds,
            acts,
            output,
        }
    }

    /// Accumulate `∂L/∂params` into `grad` and return `∂L/∂input` for an
    /// upstream gradient on the outputs.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Mat, grad: &mut [f64]) -> Mat {
        let mut delta = d_out.clone();
        for l in (0..3).rev() {
            let h = if l == 0 { &cache.input } else { &cache.acts[l - 1] };
            let (w, b) = self.layer_offsets(l);
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut d_h = Mat::zeros(h.rows(), fan_in);
            for i in 0..h.rows() {
                let x = h.row(i);
                let dz = delta.row(i);
                let dh = d_h.row_mut(i);
                for j in 0..fan_out {
                    if dz[j] == 0.0 {
                        continue;
                    }
                    grad[b + j] += dz[j];
                    let wrow = w + j * fan_in;
                    numkit::axpy(dz[j], x, &mut grad[wrow..wrow + fan_in]);
                    numkit::axpy(dz[j], &self.params[wrow..wrow + fan_in], dh);
                }
            }
            if l == 0 {
                return d_h;
            }
            // back through the activation (and standardization) of hidden layer l-1
            let z = &cache.pre[l - 1];
            for (dv, zv) in d_h.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *dv *= self.activation.deriv(*zv);
            }
            if self.norm {
                unstandardize_grad(&mut d_h, z, &cache.stds[l - 1]);
            }
            delta = d_h;
        }
        unreachable!("loop returns at the input layer")
    }
}

/// Standardize each column over the batch in place; returns the per-column stds.
fn standardize_columns(z: &mut Mat) -> Vec<f64> {
    let (n, k) = (z.rows(), z.cols());
    let mut stds = vec![0.0; k];
    for j in 0..k {
        let mean = (0..n).map(|i| z.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (z.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = (var + NORM_EPS).sqrt();
        for i in 0..n {
            z.set(i, j, (z.get(i, j) - mean) / sd);
        }
        stds[j] = sd;
    }
    stds
}

/// `dz = (dẑ − mean(dẑ) − ẑ·mean(dẑ·ẑ)) / σ`, column-wise.
fn unstandardize_grad(d: &mut Mat, zhat: &Mat, stds: &[f64]) {
    let n = d.rows();
    for j in 0..d.cols() {
        let mean_d = (0..n).map(|i| d.get(i, j)).sum::<f64>() / n as f64;
        let mean_dz = (0..n).map(|i| d.get(i, j) * zhat.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            let v = (d.get(i, j) - mean_d - zhat.get(i, j) * mean_dz) / stds[j];
            d.set(i, j, v);
        }
    }
}

pub fn latent_batch(dz: usize, n: usize, rng: &mut Rng) -> Mat {
    Mat::from_vec(n, dz, rng.gauss_vec(n * dz, 0.0, 1.0)).expect("shape matches")
}

/// Generator `z → R²` and discriminator `R² → logit`.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub arch: GanArch,
    pub generator: Mlp,
    pub discriminator: Mlp,
    /// Use `−E log D(G(z))` for the generator instead of `E log(1 − D(G(z)))`.
    pub non_saturating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub loss: f64,
    /// Discriminator outputs that fell below the log floor (or above its complement).
    pub saturated: usize,
}

impl GanModel {
    pub fn new(arch: GanArch, rng: &mut Rng) -> Self {
        let w = arch.width;
        GanModel {
            arch,
            generator: Mlp::new([arch.dz, w, w, 2], arch.activation, arch.norm, &mut rng.split("generator")),
            discriminator: Mlp::new([2, w, w, 1], arch.activation, arch.norm, &mut rng.split("discriminator")),
            non_saturating: false,
        }
    }

    pub fn generate(&self, z: &Mat) -> Mat {
        self.generator.forward(z).output
    }

    pub fn disc_prob(&self, x: &Mat) -> Vec<f64> {
        let out = self.discriminator.forward(x).output;
        out.as_slice().iter().map(|s| numkit::sigmoid(*s)).collect()
    }

    /// Generator loss and, when requested, its gradient w.r.t. θ₁ (overwritten).
    pub fn generator_loss(&self, z: &Mat, grad: Option<&mut [f64]>) -> LossReport {
        let g_cache = self.generator.forward(z);
        let d_cache = self.discriminator.forward(&g_cache.output);
        let n = z.rows() as f64;
        let mut report = LossReport::default();
        let mut d_logit = Mat::zeros(z.rows(), 1);
        for i in 0..z.rows() {
            let s = d_cache.output.get(i, 0);
            count_saturation(s, &mut report);
            if self.non_saturating {
                // −log σ(s) = softplus(−s)
                report.loss += softplus(-s) / n;
                d_logit.set(i, 0, -(1.0 - numkit::sigmoid(s)) / n);
            } else {
                // log(1 − σ(s)) = −softplus(s)
                report.loss -= softplus(s) / n;
                d_logit.set(i, 0, -numkit::sigmoid(s) / n);
            }
        }
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut scratch = vec![0.0; self.discriminator.num_params()];
            let d_x = self.discriminator.backward(&d_cache, &d_logit, &mut scratch);
            self.generator.backward(&g_cache, &d_x, g);
        }
        report
    }

    /// `−E log D(u) − E log(1 − D(G(z)))` and its gradient w.r.t. θ₂ (overwritten).
    pub fn discriminator_loss(&self, real: &Mat, z: &Mat, grad: Option<&mut [f64]>) -> LossReport {
        let fake = self.generate(z);
        let real_cache = self.discriminator.forward(real);
        let fake_cache = self.discriminator.forward(&fake);
        let mut report = LossReport::default();
        let nr = real.rows() as f64;
        let nf = z.rows() as f64;
        let mut d_real = Mat::zeros(real.rows(), 1);
        let mut d_fake = Mat::zeros(z.rows(), 1);
        for i in 0..real.rows() {
            let s = real_cache.output.get(i, 0);
            count_saturation(s, &mut report);
            report.loss += softplus(-s) / nr;
            d_real.set(i, 0, (numkit::sigmoid(s) - 1.0) / nr);
        }
        for i in 0..z.rows() {
            let s = fake_cache.output.get(i, 0);
            count_saturation(s, &mut report);
            report.loss += softplus(s) / nf;
            d_fake.set(i, 0, numkit::sigmoid(s) / nf);
        }
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            self.discriminator.backward(&real_cache, &d_real, g);
            self.discriminator.backward(&fake_cache, &d_fake, g);
        }
        report
    }
}

fn count_saturation(logit: f64, report: &mut LossReport) {
    let p = numkit::sigmoid(logit);
    if p < LOG_FLOOR || 1.0 - p < LOG_FLOOR {
        report.saturated += 1;
    }
}

/// Error of thresholding D at 0.5 on `real` (label 1) and `fake` (label 0).
pub fn disc_error_feature(model: &GanModel, real: &Mat, fake: &Mat) -> f64 {
    let wrong_real = model.disc_prob(real).iter().filter(|p| **p <= 0.5).count();
    let wrong_fake = model.disc_prob(fake).iter().filter(|p| **p > 0.5).count();
    (wrong_real + wrong_fake) as f64 / (real.rows() + fake.rows()) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub arch: GanArch,
    pub lr: f64,
    pub beta1: f64,
    pub batch_size: usize,
    pub train_size: usize,
    pub segment_len: usize,
    pub total_steps: usize,
    /// Sample count for the performance (IS) evaluation.
    pub eval_samples: usize,
    /// Feature refresh cadence (IS and D error) in executed steps.
    pub feature_every: usize,
    pub feature_samples: usize,
    pub non_saturating: bool,
    pub reward_scale: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            arch: GanArch::default(),
            lr: 1e-3,
            beta1: 0.5,
            batch_size: 64,
            train_size: 20_000,
            segment_len: 200,
            total_steps: 10_000,
            eval_samples: 2048,
            feature_every: 20,
            feature_samples: 256,
            non_saturating: false,
            reward_scale: 1.0,
        }
    }
}

/// The GAN as an alternate-optimization process: action 0 updates the
/// generator on ℓ1, action 1 updates the discriminator on ℓ2.
#[derive(Debug, Clone)]
pub struct GanTask {
    model: GanModel,
    cfg: GanConfig,
    classifier: ProxyClassifier,
    real: Mat,
    order: Vec<usize>,
    pos: usize,
    batches: u64,
    rng: Rng,
    eval_z: Mat,
    feature_z: Mat,
    cache: HistoryCache,
    actions: ActionSpace,
    step: usize,
    adam_g: AdamState,
    adam_d: AdamState,
    grad_g: Vec<f64>,
    grad_d: Vec<f64>,
    cached_is: Option<(usize, f64)>,
    pub saturated: u64,
}

impl GanTask {
    pub fn new(cfg: GanConfig, mixture: MixtureSpec, rng: &mut Rng) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.segment_len == 0 || cfg.feature_every == 0 || cfg.train_size < cfg.batch_size {
            return Err(Error::InvalidArgument("invalid GAN configuration".into()));
        }
        let mut model = GanModel::new(cfg.arch, &mut rng.split("model"));
        model.non_saturating = cfg.non_saturating;
        let real = mixture.sample_n(cfg.train_size, &mut rng.split("real"));
        let mut order: Vec<usize> = (0..cfg.train_size).collect();
        let mut batch_rng = rng.split("batches");
        batch_rng.shuffle(&mut order);
        let eval_z = latent_batch(cfg.arch.dz, cfg.eval_samples, &mut rng.split("eval"));
        let feature_z = latent_batch(cfg.arch.dz, cfg.feature_samples, &mut rng.split("features"));
        let mut adam_g = AdamState::new(model.generator.num_params(), cfg.lr);
        let mut adam_d = AdamState::new(model.discriminator.num_params(), cfg.lr);
        adam_g.beta1 = cfg.beta1;
        adam_d.beta1 = cfg.beta1;
        let mut task = GanTask {
            grad_g: vec![0.0; model.generator.num_params()],
            grad_d: vec![0.0; model.discriminator.num_params()],
            model,
            classifier: ProxyClassifier::new(mixture),
            real,
            order,
            pos: 0,
            batches: 0,
            rng: batch_rng,
            eval_z,
            feature_z,
            cache: HistoryCache::new(2, 1),
            actions: ActionSpace::new(vec![Action::new(GEN_LOSS, 0), Action::new(DISC_LOSS, 1)])?,
            step: 0,
            adam_g,
            adam_d,
            cached_is: None,
            saturated: 0,
            cfg,
        };
        task.bootstrap()?;
        Ok(task)
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn config(&self) -> &GanConfig {
        &self.cfg
    }

    fn real_batch(&mut self, consume: bool) -> Mat {
        if self.pos + self.cfg.batch_size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let mut out = Mat::zeros(self.cfg.batch_size, 2);
        for i in 0..self.cfg.batch_size {
            out.row_mut(i).copy_from_slice(self.real.row(self.order[self.pos + i]));
        }
        if consume {
            self.pos += self.cfg.batch_size;
            self.batches += 1;
        }
        out
    }

    fn bootstrap(&mut self) -> Result<()> {
        let z = latent_batch(self.cfg.arch.dz, self.cfg.batch_size, &mut self.rng);
        let real = self.real_batch(false);
        let g = self.model.generator_loss(&z, Some(&mut self.grad_g));
        self.record(GEN_LOSS, g.loss, &self.grad_g.clone())?;
        let d = self.model.discriminator_loss(&real, &z, Some(&mut self.grad_d));
        self.record(DISC_LOSS, d.loss, &self.grad_d.clone())?;
        self.refresh_features()
    }

    fn record(&mut self, loss_id: usize, loss: f64, grad: &[f64]) -> Result<()> {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("non-finite loss {loss_id}"),
            });
        }
        let norm = numkit::l2_norm(grad) / (grad.len() as f64).sqrt();
        self.cache.touch(Quantity::Loss(loss_id), loss, self.step)?;
        self.cache.touch(Quantity::GradNorm(loss_id), norm, self.step)?;
        Ok(())
    }

    fn refresh_features(&mut self) -> Result<()> {
        let fake = self.model.generate(&self.feature_z);
        let is = inception_score_of(&fake, &self.classifier);
        let n = self.cfg.feature_samples.min(self.real.rows());
        let real = Mat::from_fn(n, 2, |i, j| self.real.get(self.order[(self.pos + i) % self.order.len()], j));
        let err = disc_error_feature(&self.model, &real, &fake);
        self.cache.touch(Quantity::Validation, is, self.step)?;
        self.cache.touch(Quantity::Extra(0), err, self.step)?;
        Ok(())
    }

    /// Proxy IS on the fixed evaluation latents.
    pub fn inception_score(&mut self) -> f64 {
        if let Some((s, v)) = self.cached_is {
            if s == self.step {
                return v;
            }
        }
        let v = inception_score_of(&self.model.generate(&self.eval_z), &self.classifier);
        self.cached_is = Some((self.step, v));
        v
    }
}

impl TaskProcess for GanTask {
    fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    fn feature_dim(&self) -> usize {
        GAN_FEATURE_DIM
    }

    fn features(&self) -> Vec<f64> {
        extract_gan_features(&self.cache, self.step, self.cfg.total_steps)
    }

    fn cache(&self) -> &HistoryCache {
        &self.cache
    }

    fn apply_action(&mut self, action_index: usize) -> Result<()> {
        let z = latent_batch(self.cfg.arch.dz, self.cfg.batch_size, &mut self.rng);
        match action_index {
            0 => {
                let rep = self.model.generator_loss(&z, Some(&mut self.grad_g));
                self.saturated += rep.saturated as u64;
                let g = std::mem::take(&mut self.grad_g);
                self.record(GEN_LOSS, rep.loss, &g)?;
                numkit::adam_step(self.model.generator.params_mut(), &g, &mut self.adam_g)?;
                self.grad_g = g;
            }
            1 => {
                let real = self.real_batch(true);
                let rep = self.model.discriminator_loss(&real, &z, Some(&mut self.grad_d));
                self.saturated += rep.saturated as u64;
                let g = std::mem::take(&mut self.grad_d);
                self.record(DISC_LOSS, rep.loss, &g)?;
                numkit::adam_step(self.model.discriminator.params_mut(), &g, &mut self.adam_d)?;
                self.grad_d = g;
            }
            other => {
                return Err(Error::InvalidAction {
                    index: other,
                    size: 2,
                })
            }
        }
        self.step += 1;
        if self.step % self.cfg.feature_every == 0 {
            self.refresh_features()?;
        }
        Ok(())
    }

    fn step_count(&self) -> usize {
        self.step
    }

    fn converged(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    fn episode_mode(&self) -> EpisodeMode {
        EpisodeMode::Segments {
            segment_len: self.cfg.segment_len,
            total_steps: self.cfg.total_steps,
        }
    }

    fn reward(&mut self) -> f64 {
        gan_reward(self.inception_score(), self.cfg.reward_scale)
    }

    fn performance(&mut self) -> f64 {
        self.inception_score()
    }

    fn batches_scanned(&self) -> u64 {
        self.batches
    }

    fn final_metrics(&mut self) -> Vec<(String, f64)> {
        let is = self.inception_score();
        let fake = self.model.generate(&self.eval_z);
        let n = self.eval_z.rows().min(self.real.rows());
        let real = Mat::from_fn(n, 2, |i, j| self.real.get(i, j));
        vec![
            ("inception_score".into(), is),
            ("disc_error".into(), disc_error_feature(&self.model, &real, &fake)),
            ("steps".into(), self.step as f64),
            ("batches".into(), self.batches as f64),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_24_distinct_specs() {
        let grid = architecture_grid();
        assert_eq!(grid.len(), 24);
        for (i, a) in grid.iter().enumerate() {
            assert!(!grid[..i].contains(a));
        }
    }

    #[test]
    fn collapsed_and_spread_scores() {
        let mix = MixtureSpec::standard();
        let clf = ProxyClassifier::new(mix.clone());
        let collapsed = Mat::from_fn(100, 2, |_, j| mix.means[3][j]);
        assert!((inception_score_of(&collapsed, &clf) - 1.0).abs() < 1e-9);
        let spread = Mat::from_fn(80, 2, |i, j| mix.means[i % 8][j]);
        assert!((inception_score_of(&spread, &clf) - 8.0).abs() < 1e-6);
    }

    #[test]
    fn disc_loss_at_half_is_two_ln_two() {
        let mut rng = Rng::new(4);
        let mut model = GanModel::new(GanArch::default(), &mut rng);
        model.discriminator.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let real = MixtureSpec::standard().sample_n(16, &mut rng);
        let z = latent_batch(4, 16, &mut rng);
        let rep = model.discriminator_loss(&real, &z, None);
        assert!((rep.loss - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(gan_reward(1.0, 1.0), 1.0);
        assert!((gan_reward(3.0, 0.1) - 0.9).abs() < 1e-12);
    }
}
