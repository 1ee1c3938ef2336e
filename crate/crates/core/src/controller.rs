//! The scheduling controller `p(y | x; φ)`: a linear model or a two-layer
//! ReLU MLP with a softmax head over the task's action space. A two-action
//! softmax is exactly a Bernoulli head.
//!
//! Parameters live in one flat vector so the optimizers and the checkpoint
//! format share a single layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::numkit::{self, adam_step, AdamState, Rng};

const CHECKPOINT_MAGIC: &str = "autoloss-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp2 { hidden: usize },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::Mlp2 { .. } => "mlp2",
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Architecture::Linear => 0,
            Architecture::Mlp2 { hidden } => *hidden,
        }
    }
}

/// Default hidden width of the MLP controller and critic.
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy)]
struct Block {
    name: &'static str,
    rows: usize,
    cols: usize,
    offset: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Feed-forward network with raw (pre-softmax) outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    arch: Architecture,
    input_dim: usize,
    output_dim: usize,
    params: Vec<f64>,
}

struct Activations {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Net {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(arch: Architecture, input_dim: usize, output_dim: usize, rng: &mut Rng) -> Self {
        let mut net = Net::zeros(arch, input_dim, output_dim);
        for block in net.layout() {
            if block.name.starts_with('w') {
                let bound = 1.0 / (block.cols as f64).sqrt();
                for v in &mut net.params[block.offset..block.offset + block.len()] {
                    *v = rng.uniform(-bound, bound);
                }
            }
        }
        net
    }

    /// Zero the last layer so every input maps to the same (uniform) output.
    pub fn zero_output_layer(&mut self) {
        let last = match self.arch {
            Architecture::Linear => ["w", "b"],
            Architecture::Mlp2 { .. } => ["w2", "b2"],
        };
        for block in self.layout() {
            if last.contains(&block.name) {
                self.params[block.offset..block.offset + block.len()].fill(0.0);
            }
        }
    }

    pub fn zeros(arch: Architecture, input_dim: usize, output_dim: usize) -> Self {
        let n = Self::param_count(arch, input_dim, output_dim);
        Net {
            arch,
            input_dim,
            output_dim,
            params: vec![0.0; n],
        }
    }

    fn param_count(arch: Architecture, k: usize, q: usize) -> usize {
        match arch {
            Architecture::Linear => q * k + q,
            Architecture::Mlp2 { hidden: h } => h * k + h + q * h + q,
        }
    }

    fn layout(&self) -> Vec<Block> {
        let (k, q) = (self.input_dim, self.output_dim);
        let shapes: Vec<(&'static str, usize, usize)> = match self.arch {
            Architecture::Linear => vec![("w", q, k), ("b", q, 1)],
            Architecture::Mlp2 { hidden: h } => {
                vec![("w1", h, k), ("b1", h, 1), ("w2", q, h), ("b2", q, 1)]
            }
        };
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let b = Block {
                    name,
                    rows,
                    cols,
                    offset,
                };
                offset += rows * cols;
                b
            })
            .collect()
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
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

    fn activations(&self, x: &[f64]) -> Result<Activations> {
        check_dim("controller input", self.input_dim, x.len())?;
        let p = &self.params;
        let linear = |w_off: usize, b_off: usize, rows: usize, cols: usize, input: &[f64]| {
            (0..rows)
                .map(|r| {
                    numkit::dot(&p[w_off + r * cols..w_off + (r + 1) * cols], input) + p[b_off + r]
                })
                .collect::<Vec<f64>>()
        };
        let layout = self.layout();
        match self.arch {
            Architecture::Linear => {
                let (w, b) = (layout[0], layout[1]);
                Ok(Activations {
                    hidden_pre: Vec::new(),
                    hidden: Vec::new(),
                    out: linear(w.offset, b.offset, w.rows, w.cols, x),
                })
            }
            Architecture::Mlp2 { .. } => {
                let (w1, b1, w2, b2) = (layout[0], layout[1], layout[2], layout[3]);
                let hidden_pre = linear(w1.offset, b1.offset, w1.rows, w1.cols, x);
                let hidden: Vec<f64> = hidden_pre.iter().map(|&v| numkit::relu(v)).collect();
                let out = linear(w2.offset, b2.offset, w2.rows, w2.cols, &hidden);
                Ok(Activations {
                    hidden_pre,
                    hidden,
                    out,
                })
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.activations(x)?.out;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(out)
    }

    /// Gradient of `Σ_j d_out[j] · out_j(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], d_out: &[f64]) -> Result<Vec<f64>> {
        check_dim("backward output gradient", self.output_dim, d_out.len())?;
        let act = self.activations(x)?;
        let mut grad = vec![0.0; self.params.len()];
        let layout = self.layout();
        match self.arch {
            Architecture::Linear => {
                let (w, b) = (layout[0], layout[1]);
                for r in 0..w.rows {
                    let row = &mut grad[w.offset + r * w.cols..w.offset + (r + 1) * w.cols];
                    numkit::axpy(d_out[r], x, row);
                    grad[b.offset + r] = d_out[r];
                }
            }
            Architecture::Mlp2 { .. } => {
                let (w1, b1, w2, b2) = (layout[0], layout[1], layout[2], layout[3]);
                let mut d_hidden = vec![0.0; w2.cols];
                for r in 0..w2.rows {
                    let row = &mut grad[w2.offset + r * w2.cols..w2.offset + (r + 1) * w2.cols];
                    numkit::axpy(d_out[r], &act.hidden, row);
                    grad[b2.offset + r] = d_out[r];
                    let w_row = &self.params[w2.offset + r * w2.cols..w2.offset + (r + 1) * w2.cols];
                    numkit::axpy(d_out[r], w_row, &mut d_hidden);
                }
                for (j, dh) in d_hidden.iter().enumerate() {
                    if act.hidden_pre[j] <= 0.0 {
                        continue;
                    }
                    let row = &mut grad[w1.offset + j * w1.cols..w1.offset + (j + 1) * w1.cols];
                    numkit::axpy(*dh, x, row);
                    grad[b1.offset + j] = *dh;
                }
            }
        }
        Ok(grad)
    }
}

/// Gradient with the same flat layout as a policy's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad(pub Vec<f64>);

impl PolicyGrad {
    pub fn zeros(n: usize) -> Self {
        PolicyGrad(vec![0.0; n])
    }

    pub fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        numkit::axpy(scale, &other.0, &mut self.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Optimizer for ascent steps on the controller objective.
#[derive(Debug, Clone)]
pub enum PolicyOptimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

impl PolicyOptimizer {
    pub fn adam(num_params: usize, lr: f64) -> Self {
        PolicyOptimizer::Adam(AdamState::new(num_params, lr))
    }
}

/// `p(y | x; φ)` over `Q` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerPolicy {
    net: Net,
    skipped_updates: u64,
}

impl ControllerPolicy {
    pub fn new(arch: Architecture, input_dim: usize, num_actions: usize, rng: &mut Rng) -> Self {
        ControllerPolicy {
            net: Net::new(arch, input_dim, num_actions, rng),
            skipped_updates: 0,
        }
    }

    pub fn from_net(net: Net) -> Self {
        ControllerPolicy {
            net,
            skipped_updates: 0,
        }
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim
    }

    pub fn num_actions(&self) -> usize {
        self.net.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        numkit::softmax(&self.net.forward(x)?)
    }

    pub fn log_prob(&self, x: &[f64], decision: usize) -> Result<f64> {
        self.check_decision(decision)?;
        Ok(numkit::log_softmax(&self.net.forward(x)?)?[decision])
    }

    /// `∇φ ln p(decision | x; φ)`; the logit gradient is `onehot - probs`.
    pub fn grad_log_prob(&self, x: &[f64], decision: usize) -> Result<PolicyGrad> {
        self.check_decision(decision)?;
        let probs = self.forward(x)?;
        let d_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| if i == decision { 1.0 - p } else { -p })
            .collect();
        Ok(PolicyGrad(self.net.backward(x, &d_logits)?))
    }

    /// Sample an action; returns `(index, ln p(index | x))`.
    pub fn sample(&self, x: &[f64], rng: &mut Rng) -> Result<(usize, f64)> {
        let logits = self.net.forward(x)?;
        let probs = numkit::softmax(&logits)?;
        let idx = numkit::sample_categorical(&probs, rng)?;
        Ok((idx, numkit::log_softmax(&logits)?[idx]))
    }

    pub fn greedy(&self, x: &[f64]) -> Result<(usize, f64)> {
        let logits = self.net.forward(x)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok((best, numkit::log_softmax(&logits)?[best]))
    }

    /// Ascent step on the controller objective. A non-finite gradient is
    /// dropped and counted; returns whether the update was applied.
    pub fn apply_policy_update(
        &mut self,
        grad: &PolicyGrad,
        optimizer: &mut PolicyOptimizer,
    ) -> Result<bool> {
        check_dim("policy update", self.net.num_params(), grad.0.len())?;
        if !grad.is_finite() {
            self.skipped_updates += 1;
            return Ok(false);
        }
        apply_ascent(&mut self.net, grad, optimizer)?;
        Ok(true)
    }

    fn check_decision(&self, decision: usize) -> Result<()> {
        if decision >= self.num_actions() {
            return Err(Error::InvalidAction {
                index: decision,
                size: self.num_actions(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, encode_checkpoint(&self.net, "actor"))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let (net, tag) = decode_checkpoint(&text)?;
        if tag != "actor" {
            return Err(Error::Checkpoint(format!("expected an actor checkpoint, found tag {tag:?}")));
        }
        Ok(ControllerPolicy::from_net(net))
    }

    /// Load and check the checkpoint against a task's feature and action dimensions.
    pub fn load_for(path: impl AsRef<Path>, input_dim: usize, num_actions: usize) -> Result<Self> {
        let policy = Self::load(path)?;
        if policy.input_dim() != input_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects {} features, task provides {input_dim}",
                policy.input_dim()
            )));
        }
        if policy.num_actions() != num_actions {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} actions, task has {num_actions}",
                policy.num_actions()
            )));
        }
        Ok(policy)
    }
}

fn apply_ascent(net: &mut Net, grad: &PolicyGrad, optimizer: &mut PolicyOptimizer) -> Result<()> {
    match optimizer {
        PolicyOptimizer::Sgd { lr } => {
            numkit::axpy(*lr, &grad.0, &mut net.params);
            Ok(())
        }
        PolicyOptimizer::Adam(state) => {
            let neg: Vec<f64> = grad.0.iter().map(|g| -g).collect();
            adam_step(&mut net.params, &neg, state)
        }
    }
}

/// State-value network `V(x)` used by the actor-critic trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    net: Net,
}

impl Critic {
    pub fn new(arch: Architecture, input_dim: usize, rng: &mut Rng) -> Self {
        Critic {
            net: Net::new(arch, input_dim, 1, rng),
        }
    }

    pub fn from_net(net: Net) -> Result<Self> {
        check_dim("critic output", 1, net.output_dim())?;
        Ok(Critic { net })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }

    /// Gradient of `½ (V(x) - target)²`.
    pub fn grad_squared_error(&self, x: &[f64], target: f64) -> Result<(f64, Vec<f64>)> {
        let v = self.value(x)?;
        let g = self.net.backward(x, &[v - target])?;
        Ok((0.5 * (v - target).powi(2), g))
    }

    /// Descent step with a precomputed gradient.
    pub fn descend(&mut self, grad: &[f64], state: &mut AdamState) -> Result<()> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Ok(());
        }
        adam_step(&mut self.net.params, grad, state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, encode_checkpoint(&self.net, "critic"))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let (net, tag) = decode_checkpoint(&text)?;
        if tag != "critic" {
            return Err(Error::Checkpoint(format!("expected a critic checkpoint, found tag {tag:?}")));
        }
        Ok(Critic { net })
    }
}

/// Text checkpoint: one header line, then one line per tensor holding its
/// name, shape and entries at 17 significant digits.
pub fn encode_checkpoint(net: &Net, tag: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} tag={tag} arch={} k={} h={} q={}",
        net.arch.tag(),
        net.input_dim,
        net.arch.hidden(),
        net.output_dim
    );
    for block in net.layout() {
        let _ = write!(out, "{} {} {}", block.name, block.rows, block.cols);
        for v in &net.params[block.offset..block.offset + block.len()] {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    out
}

fn header_field<'a>(fields: &[&'a str], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Checkpoint(format!("header is missing {key}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad {what}: {s:?}")))
}

pub fn decode_checkpoint(text: &str) -> Result<(Net, String)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 2 || fields[0] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not an autoloss checkpoint".into()));
    }
    if fields[1] != format!("v{CHECKPOINT_VERSION}") {
        return Err(Error::Checkpoint(format!("unsupported version {}", fields[1])));
    }
    let tag = header_field(&fields, "tag")?.to_string();
    let k = parse_usize(header_field(&fields, "k")?, "k")?;
    let h = parse_usize(header_field(&fields, "h")?, "h")?;
    let q = parse_usize(header_field(&fields, "q")?, "q")?;
    let arch = match header_field(&fields, "arch")? {
        "linear" => Architecture::Linear,
        "mlp2" => Architecture::Mlp2 { hidden: h },
        other => return Err(Error::Checkpoint(format!("unknown architecture {other:?}"))),
    };
    let mut net = Net::zeros(arch, k, q);
    for block in net.layout() {
        let line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("truncated: missing tensor {}", block.name)))?;
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or_default();
        if name != block.name {
            return Err(Error::Checkpoint(format!("expected tensor {}, found {name:?}", block.name)));
        }
        let rows = parse_usize(parts.next().unwrap_or_default(), "rows")?;
        let cols = parse_usize(parts.next().unwrap_or_default(), "cols")?;
        if (rows, cols) != (block.rows, block.cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {rows}x{cols}, header implies {}x{}",
                block.name, block.rows, block.cols
            )));
        }
        let values: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Checkpoint(format!("bad float {s:?} in {}", block.name)))
            })
            .collect::<Result<_>>()?;
        if values.len() != block.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} entries, expected {}",
                block.name,
                values.len(),
                block.len()
            )));
        }
        net.params[block.offset..block.offset + block.len()].copy_from_slice(&values);
    }
    Ok((net, tag))
}
