//! The supervised task processes: a task loss plus an L1 term over a single
//! parameter group, trained until validation convergence.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::{extract_supervised_features, FeatureSpec, HistoryCache, Quantity};
use crate::numkit::{self, AdamState, Rng};
use crate::sched::{Action, ActionSpace, EpisodeMode, TaskProcess};
use crate::tasks::data::{DatasetKind, SupervisedDataset};
use crate::tasks::models::{l1_loss, SupervisedModel};

pub const TASK_LOSS: usize = 0;
pub const L1_LOSS: usize = 1;

/// How losses are exposed as actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Two actions: a task-loss step or an L1 step, chosen by a schedule.
    Alternate,
    /// One action: a step on `task + lambda * L1`.
    Combined { lambda: f64 },
    /// One action: task-loss steps only.
    TaskOnly,
}

/// How a chosen action turns its gradient into a parameter update.
///
/// With `Adam`, every action keeps its own moment estimates, so an L1 step
/// moves each coordinate by roughly `lr` whatever the L1 weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskOptimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardForm {
    /// `C / err`
    Inverse,
    /// `C / (err - 1)`
    InverseMinusOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub lr: f64,
    pub optimizer: TaskOptimizer,
    pub batch_size: usize,
    /// Weight `λ` of the L1 term used by the L1 action.
    pub l1_weight: f64,
    pub objective: Objective,
    pub max_steps: usize,
    /// Validation refresh cadence in executed steps.
    pub val_every: usize,
    pub patience: usize,
    pub tol: f64,
    pub reward_scale: f64,
    pub reward_form: RewardForm,
    pub features: FeatureSpec,
    /// On convergence, roll the parameters back to the best validation point.
    pub keep_best: bool,
}

impl SupervisedConfig {
    pub fn regression_default() -> Self {
        SupervisedConfig {
            lr: 2e-4,
            optimizer: TaskOptimizer::Adam,
            batch_size: 64,
            l1_weight: 1.0,
            objective: Objective::Alternate,
            max_steps: 20_000,
            val_every: 50,
            patience: 10,
            tol: 1e-3,
            // Keeps gaps between trained runs (err near the noise floor)
            // within an order of magnitude of the advantage clip.
            reward_scale: 10.0,
            reward_form: RewardForm::Inverse,
            features: FeatureSpec::full(2),
            keep_best: true,
        }
    }

    pub fn classification_default() -> Self {
        SupervisedConfig {
            lr: 1e-3,
            val_every: 10,
            reward_scale: 1.0,
            reward_form: RewardForm::InverseMinusOne,
            ..Self::regression_default()
        }
    }
}

/// `C/err` or `C/(err-1)`; `err` is floored at 1e-9 for the inverse form.
pub fn episode_reward(err: f64, scale: f64, form: RewardForm) -> f64 {
    match form {
        RewardForm::Inverse => scale / err.max(1e-9),
        RewardForm::InverseMinusOne => {
            let denom = err - 1.0;
            if denom.abs() < 1e-9 {
                scale / -1e-9
            } else {
                scale / denom
            }
        }
    }
}

/// Plateau detector: converged once the best value has not improved by more
/// than `tol` (relative) for `patience` consecutive evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMonitor {
    patience: usize,
    tol: f64,
    best: Option<f64>,
    stale: usize,
}

impl ConvergenceMonitor {
    pub fn new(patience: usize, tol: f64) -> Self {
        ConvergenceMonitor {
            patience,
            tol,
            best: None,
            stale: 0,
        }
    }

    pub fn push(&mut self, value: f64) -> bool {
        match self.best {
            None => self.best = Some(value),
            Some(best) => {
                if value < best - self.tol * best.abs() {
                    self.best = Some(value);
                    self.stale = 0;
                } else {
                    self.stale += 1;
                    if value < best {
                        self.best = Some(value);
                    }
                }
            }
        }
        self.converged()
    }

    pub fn converged(&self) -> bool {
        self.best.is_some() && self.stale >= self.patience
    }
}

pub fn check_convergence(history: &[f64], patience: usize, tol: f64) -> bool {
    let mut m = ConvergenceMonitor::new(patience, tol);
    history.iter().fold(false, |_, &v| m.push(v))
}

/// Cycles through shuffled epochs of a split; only consumed batches count.
#[derive(Debug, Clone)]
pub struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    consumed: u64,
    rng: Rng,
}

impl BatchCursor {
    pub fn new(indices: Vec<usize>, batch_size: usize, mut rng: Rng) -> Self {
        let mut order = indices;
        rng.shuffle(&mut order);
        let batch_size = batch_size.min(order.len()).max(1);
        BatchCursor {
            order,
            pos: 0,
            batch_size,
            consumed: 0,
            rng,
        }
    }

    fn ensure_room(&mut self) {
        if self.pos + self.batch_size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
    }

    /// The batch the next `next_batch` call will return.
    pub fn peek(&mut self) -> &[usize] {
        self.ensure_room();
        &self.order[self.pos..self.pos + self.batch_size]
    }

    pub fn next_batch(&mut self) -> &[usize] {
        self.ensure_room();
        let start = self.pos;
        self.pos += self.batch_size;
        self.consumed += 1;
        &self.order[start..start + self.batch_size]
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepKind {
    Task,
    L1,
    Combined,
}

/// A supervised model trained on one split, validated on another and
/// finally scored on a test split.
#[derive(Debug, Clone)]
pub struct SupervisedTask<M: SupervisedModel> {
    model: M,
    data: Arc<SupervisedDataset>,
    val: Vec<usize>,
    test: Vec<usize>,
    cfg: SupervisedConfig,
    cursor: BatchCursor,
    cache: HistoryCache,
    monitor: ConvergenceMonitor,
    action_space: ActionSpace,
    steps: Vec<StepKind>,
    step: usize,
    val_history: Vec<f64>,
    grad_buf: Vec<f64>,
    delta_buf: Vec<f64>,
    adam: Vec<AdamState>,
    best: Option<(f64, Vec<f64>)>,
    finished: bool,
}

impl<M: SupervisedModel> SupervisedTask<M> {
    pub fn new(
        model: M,
        data: Arc<SupervisedDataset>,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
        cfg: SupervisedConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("train and validation splits must be nonempty".into()));
        }
        if cfg.lr <= 0.0 || cfg.batch_size == 0 || cfg.val_every == 0 {
            return Err(Error::InvalidArgument("lr, batch size and val cadence must be positive".into()));
        }
        let (actions, steps) = match cfg.objective {
            Objective::Alternate => (
                vec![Action::new(TASK_LOSS, 0), Action::new(L1_LOSS, 0)],
                vec![StepKind::Task, StepKind::L1],
            ),
            Objective::Combined { .. } => (vec![Action::new(TASK_LOSS, 0)], vec![StepKind::Combined]),
            Objective::TaskOnly => (vec![Action::new(TASK_LOSS, 0)], vec![StepKind::Task]),
        };
        let cursor = BatchCursor::new(train, cfg.batch_size, rng.split("batches"));
        let n = model.num_params();
        let mut task = SupervisedTask {
            model,
            data,
            val,
            test,
            monitor: ConvergenceMonitor::new(cfg.patience, cfg.tol),
            cfg,
            cursor,
            cache: HistoryCache::new(2, 0),
            action_space: ActionSpace::new(actions)?,
            steps,
            step: 0,
            val_history: Vec::new(),
            grad_buf: vec![0.0; n],
            delta_buf: vec![0.0; n],
            adam: Vec::new(),
            best: None,
            finished: false,
        };
        if task.cfg.optimizer == TaskOptimizer::Adam {
            task.adam = (0..task.steps.len()).map(|_| AdamState::new(n, task.cfg.lr)).collect();
        }
        task.bootstrap()?;
        Ok(task)
    }

    /// Fill every cache entry from the initial parameters without consuming a batch.
    fn bootstrap(&mut self) -> Result<()> {
        let batch = self.cursor.peek().to_vec();
        let loss = self.model.task_loss(&self.data, &batch, Some(&mut self.grad_buf));
        self.record_task(loss)?;
        self.record_l1();
        self.refresh_validation()?;
        Ok(())
    }

    fn norm_scale(&self) -> f64 {
        (self.model.num_params() as f64).sqrt()
    }

    fn record_task(&mut self, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("task loss {loss}"),
            });
        }
        let g = numkit::l2_norm(&self.grad_buf) / self.norm_scale();
        self.cache.touch(Quantity::Loss(TASK_LOSS), loss, self.step)?;
        self.cache.touch(Quantity::GradNorm(TASK_LOSS), g, self.step)?;
        Ok(())
    }

    fn l1_weight(&self) -> f64 {
        match self.cfg.objective {
            Objective::Combined { lambda } => lambda,
            _ => self.cfg.l1_weight,
        }
    }

    fn record_l1(&mut self) {
        let lambda = self.l1_weight();
        let params = self.model.params();
        let loss = lambda * l1_loss(params, None);
        let nnz = params.iter().filter(|p| **p != 0.0).count() as f64;
        let g = lambda * nnz.sqrt() / self.norm_scale();
        let _ = self.cache.touch(Quantity::Loss(L1_LOSS), loss, self.step);
        let _ = self.cache.touch(Quantity::GradNorm(L1_LOSS), g, self.step);
    }

    fn refresh_validation(&mut self) -> Result<()> {
        let v = self.model.task_loss(&self.data, &self.val, None);
        if !v.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("validation loss {v}"),
            });
        }
        self.cache.touch(Quantity::Validation, v, self.step)?;
        self.val_history.push(v);
        self.monitor.push(v);
        if self.cfg.keep_best && self.best.as_ref().is_none_or(|(b, _)| v < *b) {
            self.best = Some((v, self.model.params().to_vec()));
        }
        Ok(())
    }

    /// Turn `grad_buf` into `delta_buf` with the optimizer state of `slot`.
    fn compute_delta(&mut self, slot: usize) -> Result<()> {
        match self.cfg.optimizer {
            TaskOptimizer::Sgd => {
                for (d, g) in self.delta_buf.iter_mut().zip(&self.grad_buf) {
                    *d = self.cfg.lr * g;
                }
                Ok(())
            }
            TaskOptimizer::Adam => numkit::adam_delta(&self.grad_buf, &mut self.adam[slot], &mut self.delta_buf),
        }
    }

    fn task_step(&mut self, slot: usize) -> Result<()> {
        let batch = self.cursor.next_batch().to_vec();
        let loss = self.model.task_loss(&self.data, &batch, Some(&mut self.grad_buf));
        self.record_task(loss)?;
        self.compute_delta(slot)?;
        numkit::axpy(-1.0, &self.delta_buf, self.model.params_mut());
        Ok(())
    }

    /// Plain sub-gradient step on `λ·‖θ‖₁`: every coordinate moves `ε·λ`
    /// toward zero and snaps to exactly zero instead of crossing it. The
    /// task optimizer's adaptive scaling is deliberately bypassed so the
    /// step size follows `λ`.
    fn l1_step(&mut self, _slot: usize) -> Result<()> {
        self.record_l1();
        let step = self.cfg.lr * self.l1_weight();
        for p in self.model.params_mut() {
            if p.abs() <= step {
                *p = 0.0;
            } else {
                *p -= step * p.signum();
            }
        }
        Ok(())
    }

    /// One step on `task + λ·L1`; a coordinate whose update would cross zero stops at zero.
    fn combined_step(&mut self, slot: usize) -> Result<()> {
        let batch = self.cursor.next_batch().to_vec();
        let loss = self.model.task_loss(&self.data, &batch, Some(&mut self.grad_buf));
        self.record_task(loss)?;
        self.record_l1();
        let lambda = self.l1_weight();
        for (g, p) in self.grad_buf.iter_mut().zip(self.model.params()) {
            if *p != 0.0 {
                *g += lambda * p.signum();
            }
        }
        self.compute_delta(slot)?;
        for (p, d) in self.model.params_mut().iter_mut().zip(&self.delta_buf) {
            let next = *p - d;
            *p = if *p != 0.0 && next * *p < 0.0 { 0.0 } else { next };
        }
        Ok(())
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut M {
        &mut self.model
    }

    pub fn config(&self) -> &SupervisedConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &SupervisedDataset {
        &self.data
    }

    pub fn val_history(&self) -> &[f64] {
        &self.val_history
    }

    pub fn validation_metric(&self) -> f64 {
        self.model.metric(&self.data, &self.val)
    }

    pub fn test_metric(&self) -> f64 {
        self.model.metric(&self.data, &self.test)
    }

    pub fn loss_and_grad(&self, batch: &[usize], loss_id: usize) -> Result<(f64, Vec<f64>)> {
        loss_and_grad(&self.model, &self.data, batch, loss_id)
    }
}

/// Loss value and (sub-)gradient of loss `loss_id` on `batch`.
pub fn loss_and_grad<M: SupervisedModel>(
    model: &M,
    data: &SupervisedDataset,
    batch: &[usize],
    loss_id: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; model.num_params()];
    let loss = match loss_id {
        TASK_LOSS => model.task_loss(data, batch, Some(&mut g)),
        L1_LOSS => l1_loss(model.params(), Some(&mut g)),
        other => return Err(Error::InvalidArgument(format!("unknown loss id {other}"))),
    };
    if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss or gradient"));
    }
    Ok((loss, g))
}

impl<M: SupervisedModel> TaskProcess for SupervisedTask<M> {
    fn action_space(&self) -> &ActionSpace {
        &self.action_space
    }

    fn feature_dim(&self) -> usize {
        self.cfg.features.dim()
    }

    fn features(&self) -> Vec<f64> {
        extract_supervised_features(&self.cache, self.step, self.cfg.max_steps, &self.cfg.features)
    }

    fn cache(&self) -> &HistoryCache {
        &self.cache
    }

    fn apply_action(&mut self, action_index: usize) -> Result<()> {
        let kind = *self.steps.get(action_index).ok_or(Error::InvalidAction {
            index: action_index,
            size: self.steps.len(),
        })?;
        match kind {
            StepKind::Task => self.task_step(action_index)?,
            StepKind::L1 => self.l1_step(action_index)?,
            StepKind::Combined => self.combined_step(action_index)?,
        }
        self.step += 1;
        if self.step % self.cfg.val_every == 0 {
            self.refresh_validation()?;
        }
        if !self.finished && self.converged() {
            self.finished = true;
            if let Some((_, params)) = self.best.take() {
                self.model.params_mut().copy_from_slice(&params);
            }
        }
        Ok(())
    }

    fn step_count(&self) -> usize {
        self.step
    }

    fn converged(&self) -> bool {
        self.step >= self.cfg.max_steps || self.monitor.converged()
    }

    fn episode_mode(&self) -> EpisodeMode {
        EpisodeMode::UntilConvergence {
            max_steps: self.cfg.max_steps,
        }
    }

    fn reward(&mut self) -> f64 {
        episode_reward(self.validation_metric(), self.cfg.reward_scale, self.cfg.reward_form)
    }

    fn performance(&mut self) -> f64 {
        self.validation_metric()
    }

    fn batches_scanned(&self) -> u64 {
        self.cursor.consumed()
    }

    fn final_metrics(&mut self) -> Vec<(String, f64)> {
        let test = self.test_metric();
        let mut out = vec![
            ("test_metric".to_string(), test),
            ("val_metric".to_string(), self.validation_metric()),
        ];
        if self.data.kind == DatasetKind::Regression {
            if let Some(floor) = self.data.noise_floor(&self.test) {
                out.push(("test_adjusted".to_string(), test - floor));
            }
        }
        let params = self.model.params();
        let zeros = params.iter().filter(|p| **p == 0.0).count();
        out.push(("sparsity".to_string(), zeros as f64 / params.len() as f64));
        out.push(("steps".to_string(), self.step as f64));
        out.push(("batches".to_string(), self.cursor.consumed() as f64));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_examples() {
        let decreasing: Vec<f64> = (0..50).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert!(!check_convergence(&decreasing, 3, 1e-3));
        assert!(!check_convergence(&[1.0, 1.0, 1.0], 3, 1e-3));
        assert!(check_convergence(&[1.0, 1.0, 1.0, 1.0], 3, 1e-3));
        let mut flattened = decreasing.clone();
        flattened.extend([5.1, 5.1, 5.1]);
        assert!(check_convergence(&flattened, 3, 1e-3));
    }

    #[test]
    fn noisy_plateau_converges_within_twice_patience() {
        let mut rng = Rng::new(3);
        for trial in 0..50 {
            let mut m = ConvergenceMonitor::new(10, 1e-3);
            let mut hit = None;
            for i in 0..200 {
                if m.push(4.0 + rng.gauss(0.0, 5e-4)) {
                    hit = Some(i + 1);
                    break;
                }
            }
            let n = hit.expect("never converged");
            assert!(n <= 20 + 1, "trial {trial}: {n}");
        }
    }

    #[test]
    fn reward_forms() {
        assert!((episode_reward(0.1, 1.0, RewardForm::Inverse) - 10.0).abs() < 1e-12);
        assert_eq!(episode_reward(0.5, 1.0, RewardForm::InverseMinusOne), -2.0);
        assert!(episode_reward(0.0, 1.0, RewardForm::Inverse).is_finite());
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(
                episode_reward(w[1], 1.0, RewardForm::InverseMinusOne)
                    < episode_reward(w[0], 1.0, RewardForm::InverseMinusOne)
            );
        }
    }

    #[test]
    fn cursor_counts_only_consumed_batches() {
        let mut c = BatchCursor::new((0..10).collect(), 4, Rng::new(1));
        let first = c.peek().to_vec();
        assert_eq!(c.consumed(), 0);
        assert_eq!(c.next_batch(), &first[..]);
        c.next_batch();
        // the third batch does not fit: a new epoch starts
        c.next_batch();
        assert_eq!(c.consumed(), 3);
    }
}
