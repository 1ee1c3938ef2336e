//! Shared-encoder multi-task process: three regression tasks read the same
//! linear encoder through their own linear heads. Task 0 is the target.

use crate::error::{Error, Result};
use crate::features::{extract_supervised_features, FeatureSpec, HistoryCache, Quantity};
use crate::numkit::{self, AdamState, Mat, Rng};
use crate::sched::{Action, ActionSpace, EpisodeMode, TaskProcess};
use crate::tasks::supervised::BatchCursor;

pub const NUM_TASKS: usize = 3;
pub const TARGET_TASK: usize = 0;
const MSE_CAP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub inputs: Mat,
    pub targets: Vec<f64>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskData {
    /// Ground-truth encoder, `h × d`.
    pub encoder: Mat,
    /// Ground-truth heads; the target head sums the latent.
    pub heads: Vec<Vec<f64>>,
    pub tasks: Vec<TaskData>,
    pub noise_std: f64,
}

impl MultiTaskData {
    pub fn dim(&self) -> usize {
        self.encoder.cols()
    }

    pub fn latent(&self) -> usize {
        self.encoder.rows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.targets.len()).collect()
    }

    /// The generating model as a [`MultiTaskModel`].
    pub fn true_model(&self) -> MultiTaskModel {
        let (h, d) = (self.latent(), self.dim());
        let mut m = MultiTaskModel::zeros(d, h);
        m.params[..h * d].copy_from_slice(self.encoder.as_slice());
        for (k, head) in self.heads.iter().enumerate() {
            m.head_mut(k).copy_from_slice(head);
        }
        m
    }
}

/// `W* ~ U[−0.5, 0.5]^{h×d}`, `u ~ U[−5, 5]^d`, `v_m = h_mᵀ W* u + ξ`.
/// Each task keeps the last `val_frac` of its samples for validation.
pub fn synth_multitask_data(
    d: usize,
    h: usize,
    sizes: [usize; NUM_TASKS],
    noise_std: f64,
    val_frac: f64,
    rng: &mut Rng,
) -> Result<MultiTaskData> {
    if d == 0 || h == 0 || sizes.iter().any(|&s| s < 2) {
        return Err(Error::InvalidArgument("multi-task sizes and dimensions must be positive".into()));
    }
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::InvalidArgument(format!("validation fraction {val_frac} outside [0, 1)")));
    }
    let mut enc_rng = rng.split("encoder");
    let encoder = Mat::from_vec(h, d, enc_rng.uniform_vec(h * d, -0.5, 0.5))?;
    let mut heads = vec![vec![1.0; h]];
    let mut head_rng = rng.split("heads");
    for _ in 1..NUM_TASKS {
        heads.push(head_rng.uniform_vec(h, -1.0, 1.0));
    }
    let mut tasks = Vec::with_capacity(NUM_TASKS);
    for (m, &n) in sizes.iter().enumerate() {
        let mut r = rng.split_indexed("task", m as u64);
        let inputs = Mat::from_vec(n, d, r.uniform_vec(n * d, -5.0, 5.0))?;
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                let z = encoder.matvec(inputs.row(i));
                numkit::dot(&heads[m], &z) + r.gauss(0.0, noise_std)
            })
            .collect();
        let n_val = ((n as f64 * val_frac).round() as usize).clamp(1, n - 1);
        tasks.push(TaskData {
            inputs,
            targets,
            train: (0..n - n_val).collect(),
            val: (n - n_val..n).collect(),
        });
    }
    Ok(MultiTaskData {
        encoder,
        heads,
        tasks,
        noise_std,
    })
}

/// Layout: `[W_e (h×d), a_0 (h), a_1 (h), a_2 (h)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel {
    d: usize,
    h: usize,
    params: Vec<f64>,
}

impl MultiTaskModel {
    pub fn zeros(d: usize, h: usize) -> Self {
        MultiTaskModel {
            d,
            h,
            params: vec![0.0; h * d + NUM_TASKS * h],
        }
    }

    pub fn new(d: usize, h: usize, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(d, h);
        let be = 1.0 / (d as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        for v in &mut m.params[..h * d] {
            *v = rng.uniform(-be, be);
        }
        for v in &mut m.params[h * d..] {
            *v = rng.uniform(-bh, bh);
        }
        m
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn encoder(&self) -> &[f64] {
        &self.params[..self.h * self.d]
    }

    pub fn head(&self, m: usize) -> &[f64] {
        let o = self.h * self.d + m * self.h;
        &self.params[o..o + self.h]
    }

    pub fn head_mut(&mut self, m: usize) -> &mut [f64] {
        let o = self.h * self.d + m * self.h;
        &mut self.params[o..o + self.h]
    }

    /// Indices of `{θ_e, θ_d^m}` in the flat parameter vector.
    pub fn group(&self, m: usize) -> Vec<usize> {
        let o = self.h * self.d + m * self.h;
        (0..self.h * self.d).chain(o..o + self.h).collect()
    }

    fn latent(&self, u: &[f64], z: &mut [f64]) {
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = numkit::dot(&self.params[k * self.d..(k + 1) * self.d], u);
        }
    }

    pub fn predict(&self, m: usize, u: &[f64]) -> f64 {
        let mut z = vec![0.0; self.h];
        self.latent(u, &mut z);
        numkit::dot(self.head(m), &z)
    }

    /// Mean squared error of task `m` on `idx`; the full-length gradient
    /// (zero outside the task's group) is written into `grad` when given.
    pub fn task_loss(&self, m: usize, data: &TaskData, idx: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let n = idx.len() as f64;
        let mut z = vec![0.0; self.h];
        let mut sse = 0.0;
        let head_off = self.h * self.d + m * self.h;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for &i in idx {
            let u = data.inputs.row(i);
            self.latent(u, &mut z);
            let e = numkit::dot(self.head(m), &z) - data.targets[i];
            sse += e * e;
            if let Some(g) = grad.as_deref_mut() {
                let s = 2.0 * e / n;
                for k in 0..self.h {
                    g[head_off + k] += s * z[k];
                    let coef = s * self.params[head_off + k];
                    numkit::axpy(coef, u, &mut g[k * self.d..(k + 1) * self.d]);
                }
            }
        }
        sse / n
    }
}

/// `exp(min(val MSE of the target task, 50))`.
pub fn target_performance(model: &MultiTaskModel, data: &MultiTaskData) -> f64 {
    let t = &data.tasks[TARGET_TASK];
    model.task_loss(TARGET_TASK, t, &t.val, None).min(MSE_CAP).exp()
}

/// One Adam step on task `m` restricted to its parameter group.
pub fn multitask_step(
    model: &mut MultiTaskModel,
    m: usize,
    data: &TaskData,
    batch: &[usize],
    state: &mut AdamState,
    grad: &mut [f64],
) -> Result<f64> {
    if m >= NUM_TASKS {
        return Err(Error::InvalidAction {
            index: m,
            size: NUM_TASKS,
        });
    }
    let loss = model.task_loss(m, data, batch, Some(grad));
    // outside the group the gradient is exactly zero, and so is the Adam step
    numkit::adam_step(model.params_mut(), grad, state)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskConfig {
    pub d: usize,
    pub latent: usize,
    pub sizes: [usize; NUM_TASKS],
    pub noise_std: f64,
    pub val_frac: f64,
    pub learning_rates: [f64; NUM_TASKS],
    pub batch_size: usize,
    pub segment_len: usize,
    pub total_steps: usize,
    pub val_every: usize,
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        MultiTaskConfig {
            d: 64,
            latent: 2,
            sizes: [300, 6000, 6000],
            noise_std: 2.0,
            val_frac: 0.2,
            learning_rates: [1e-3; NUM_TASKS],
            batch_size: 64,
            segment_len: 100,
            total_steps: 10_000,
            val_every: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiTask {
    model: MultiTaskModel,
    data: std::sync::Arc<MultiTaskData>,
    cfg: MultiTaskConfig,
    cursors: Vec<BatchCursor>,
    adam: Vec<AdamState>,
    cache: HistoryCache,
    spec: FeatureSpec,
    actions: ActionSpace,
    grad: Vec<f64>,
    step: usize,
}

impl MultiTask {
    pub fn new(data: std::sync::Arc<MultiTaskData>, cfg: MultiTaskConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.segment_len == 0 || cfg.val_every == 0 {
            return Err(Error::InvalidArgument("invalid multi-task configuration".into()));
        }
        let model = MultiTaskModel::new(data.dim(), data.latent(), &mut rng.split("model"));
        let n = model.params().len();
        let cursors = data
            .tasks
            .iter()
            .enumerate()
            .map(|(m, t)| BatchCursor::new(t.train.clone(), cfg.batch_size, rng.split_indexed("batches", m as u64)))
            .collect();
        let adam = cfg.learning_rates.iter().map(|&lr| AdamState::new(n, lr)).collect();
        let actions = ActionSpace::new((0..NUM_TASKS).map(|m| Action::new(m, m)).collect())?;
        let mut task = MultiTask {
            model,
            data,
            cfg,
            cursors,
            adam,
            cache: HistoryCache::new(NUM_TASKS, 0),
            spec: FeatureSpec::full(NUM_TASKS),
            actions,
            grad: vec![0.0; n],
            step: 0,
        };
        for m in 0..NUM_TASKS {
            let batch = task.cursors[m].peek().to_vec();
            let loss = task.model.task_loss(m, &task.data.tasks[m], &batch, Some(&mut task.grad));
            task.record(m, loss)?;
        }
        task.refresh_validation()?;
        Ok(task)
    }

    pub fn model(&self) -> &MultiTaskModel {
        &self.model
    }

    pub fn target_val_loss(&self) -> f64 {
        let t = &self.data.tasks[TARGET_TASK];
        self.model.task_loss(TARGET_TASK, t, &t.val, None)
    }

    fn record(&mut self, m: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("task {m} loss {loss}"),
            });
        }
        let g = numkit::l2_norm(&self.grad) / (self.grad.len() as f64).sqrt();
        self.cache.touch(Quantity::Loss(m), loss, self.step)?;
        self.cache.touch(Quantity::GradNorm(m), g, self.step)?;
        Ok(())
    }

    fn refresh_validation(&mut self) -> Result<()> {
        let v = self.target_val_loss();
        if !v.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: "target validation loss".into(),
            });
        }
        self.cache.touch(Quantity::Validation, v, self.step)
    }
}

impl TaskProcess for MultiTask {
    fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    fn feature_dim(&self) -> usize {
        self.spec.dim()
    }

    fn features(&self) -> Vec<f64> {
        extract_supervised_features(&self.cache, self.step, self.cfg.total_steps, &self.spec)
    }

    fn cache(&self) -> &HistoryCache {
        &self.cache
    }

    fn apply_action(&mut self, action_index: usize) -> Result<()> {
        if action_index >= NUM_TASKS {
            return Err(Error::InvalidAction {
                index: action_index,
                size: NUM_TASKS,
            });
        }
        let m = action_index;
        let batch = self.cursors[m].next_batch().to_vec();
        let data = std::sync::Arc::clone(&self.data);
        let loss = multitask_step(&mut self.model, m, &data.tasks[m], &batch, &mut self.adam[m], &mut self.grad)?;
        self.record(m, loss)?;
        self.step += 1;
        if self.step % self.cfg.val_every == 0 {
            self.refresh_validation()?;
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
        1.0 / target_performance(&self.model, &self.data)
    }

    fn performance(&mut self) -> f64 {
        target_performance(&self.model, &self.data)
    }

    fn batches_scanned(&self) -> u64 {
        self.cursors.iter().map(|c| c.consumed()).sum()
    }

    fn final_metrics(&mut self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("target_val_loss".to_string(), self.target_val_loss()),
            ("target_performance".to_string(), target_performance(&self.model, &self.data)),
        ];
        for m in 0..NUM_TASKS {
            out.push((format!("batches_task{m}"), self.cursors[m].consumed() as f64));
        }
        out.push(("steps".into(), self.step as f64));
        out
    }
}
