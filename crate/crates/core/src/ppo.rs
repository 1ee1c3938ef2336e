//! Online actor-critic training with PPO for long-horizon tasks, driven by
//! normalized segment rewards.

use std::collections::VecDeque;

use crate::controller::{Architecture, ControllerPolicy, Critic, PolicyGrad, PolicyOptimizer, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::numkit::{AdamState, Rng};
use crate::sched::{EpisodeMode, TaskProcess};

/// Performance history at segment boundaries for the normalized
/// improvement reward `C·(P(t+T) − P(t)) / ((P(t) − P(t−kT))/k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRewardState {
    history: VecDeque<f64>,
    lookback: usize,
    scale: f64,
    floor: f64,
}

impl SegmentRewardState {
    pub fn new(lookback: usize, scale: f64, floor: f64) -> Result<Self> {
        if lookback == 0 || !(floor > 0.0) {
            return Err(Error::InvalidArgument("lookback and denominator floor must be positive".into()));
        }
        Ok(SegmentRewardState {
            history: VecDeque::with_capacity(lookback + 2),
            lookback,
            scale,
            floor,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(3, 1.0, 1e-6).expect("valid defaults")
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    /// Push the performance at a new boundary. Returns `None` until `k+1`
    /// earlier boundaries exist.
    pub fn push(&mut self, p_new: f64) -> Option<f64> {
        let ready = self.history.len() > self.lookback;
        let reward = if ready {
            let n = self.history.len();
            let p_t = self.history[n - 1];
            let p_back = self.history[n - 1 - self.lookback];
            let raw = (p_t - p_back) / self.lookback as f64;
            let denom = if raw.abs() < self.floor {
                if raw < 0.0 {
                    -self.floor
                } else {
                    self.floor
                }
            } else {
                raw
            };
            Some(self.scale * (p_new - p_t) / denom)
        } else {
            None
        };
        self.history.push_back(p_new);
        while self.history.len() > self.lookback + 1 {
            self.history.pop_front();
        }
        reward
    }
}

/// Convenience wrapper over [`SegmentRewardState::push`].
pub fn segment_reward(state: &mut SegmentRewardState, p_new: f64) -> Option<f64> {
    state.push(p_new)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub arch: Architecture,
    pub gamma: f64,
    pub clip: f64,
    pub capacity: usize,
    pub minibatch: usize,
    /// Minibatch updates between behavior-policy syncs.
    pub sync_every: usize,
    pub learning_rate: f64,
    /// Minibatch updates run at every segment boundary.
    pub updates_per_segment: usize,
    /// Per-step rewards are clipped to `±reward_clip` before discounting.
    pub reward_clip: f64,
    pub lookback: usize,
    pub reward_scale: f64,
    pub denom_floor: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            arch: Architecture::Mlp2 { hidden: DEFAULT_HIDDEN },
            gamma: 0.95,
            clip: 0.2,
            capacity: 2000,
            minibatch: 64,
            sync_every: 10,
            learning_rate: 1e-3,
            updates_per_segment: 5,
            reward_clip: 1.0,
            lookback: 3,
            reward_scale: 1.0,
            denom_floor: 1e-6,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidArgument("PPO clip must be positive".into()));
        }
        if self.minibatch == 0 || self.capacity < self.minibatch {
            return Err(Error::InvalidArgument("buffer capacity must hold at least one minibatch".into()));
        }
        if self.sync_every == 0 {
            return Err(Error::InvalidArgument("sync interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub decision: usize,
    /// Log-probability under the behavior policy at collection time.
    pub behavior_log_prob: f64,
    pub reward: f64,
    pub done: bool,
}

/// `G_t = r_t + γ·G_{t+1}`, restarting after every `done` transition and at the end.
pub fn discounted_returns(transitions: &[Transition], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; transitions.len()];
    let mut running = 0.0;
    for (i, tr) in transitions.iter().enumerate().rev() {
        if tr.done {
            running = 0.0;
        }
        running = tr.reward + gamma * running;
        out[i] = running;
    }
    out
}

/// Per-transition clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Actor, critic, behavior policy and their optimizer state.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub actor: ControllerPolicy,
    pub behavior: ControllerPolicy,
    pub critic: Critic,
    actor_opt: PolicyOptimizer,
    critic_opt: AdamState,
    updates: usize,
    pub skipped_transitions: u64,
}

impl PpoLearner {
    pub fn new(actor: ControllerPolicy, critic: Critic, cfg: &PpoConfig) -> Result<Self> {
        cfg.validate()?;
        if critic.net().input_dim() != actor.input_dim() {
            return Err(Error::Dimension {
                context: "critic input vs actor input",
                expected: actor.input_dim(),
                got: critic.net().input_dim(),
            });
        }
        Ok(PpoLearner {
            behavior: actor.clone(),
            actor_opt: PolicyOptimizer::adam(actor.num_params(), cfg.learning_rate),
            critic_opt: AdamState::new(critic.net().num_params(), cfg.learning_rate),
            actor,
            critic,
            updates: 0,
            skipped_transitions: 0,
        })
    }

    pub fn fresh(input_dim: usize, num_actions: usize, cfg: &PpoConfig, rng: &mut Rng) -> Result<Self> {
        // Start from the uniform policy so early exploration is balanced.
        let mut actor = ControllerPolicy::new(cfg.arch, input_dim, num_actions, &mut rng.split("actor"));
        actor.net_mut().zero_output_layer();
        let critic = Critic::new(cfg.arch, input_dim, &mut rng.split("critic"));
        Self::new(actor, critic, cfg)
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn sync(&mut self) {
        self.behavior = self.actor.clone();
    }

    /// Surrogate-objective gradient over `batch` with precomputed advantages.
    pub fn surrogate_gradient(&mut self, batch: &[(&Transition, f64)], eps: f64) -> Result<PolicyGrad> {
        let mut grad = PolicyGrad::zeros(self.actor.num_params());
        let mut used = 0usize;
        for (tr, adv) in batch {
            let logp = self.actor.log_prob(&tr.state, tr.decision)?;
            let ratio = (logp - tr.behavior_log_prob).exp();
            if !ratio.is_finite() {
                self.skipped_transitions += 1;
                continue;
            }
            used += 1;
            // The clipped branch carries no gradient once it is the active minimum.
            let clipped = (*adv > 0.0 && ratio > 1.0 + eps) || (*adv < 0.0 && ratio < 1.0 - eps);
            if clipped || *adv == 0.0 {
                continue;
            }
            let g = self.actor.grad_log_prob(&tr.state, tr.decision)?;
            grad.add_scaled(&g, ratio * adv);
        }
        if used > 0 {
            grad.scale(1.0 / used as f64);
        }
        Ok(grad)
    }

    /// One minibatch step for actor and critic; syncs the behavior policy
    /// every `sync_every` steps.
    pub fn minibatch_step(&mut self, batch: &[(&Transition, f64)], cfg: &PpoConfig) -> Result<()> {
        let with_adv: Vec<(&Transition, f64)> = batch
            .iter()
            .map(|(tr, ret)| Ok((*tr, ret - self.critic.value(&tr.state)?)))
            .collect::<Result<_>>()?;
        let grad = self.surrogate_gradient(&with_adv, cfg.clip)?;
        self.actor.apply_policy_update(&grad, &mut self.actor_opt)?;
        let mut cgrad = vec![0.0; self.critic.net().num_params()];
        for (tr, ret) in batch {
            let (_, g) = self.critic.grad_squared_error(&tr.state, *ret)?;
            for (a, b) in cgrad.iter_mut().zip(&g) {
                *a += b / batch.len() as f64;
            }
        }
        self.critic.descend(&cgrad, &mut self.critic_opt)?;
        self.updates += 1;
        if self.updates % cfg.sync_every == 0 {
            self.sync();
        }
        Ok(())
    }
}

/// Runs `cfg.updates_per_segment` minibatch steps on uniformly drawn
/// minibatches of the buffer.
pub fn ppo_update(
    learner: &mut PpoLearner,
    buffer: &[Transition],
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("empty PPO buffer".into()));
    }
    let returns = discounted_returns(buffer, cfg.gamma);
    let size = cfg.minibatch.min(buffer.len());
    for _ in 0..cfg.updates_per_segment {
        let batch: Vec<(&Transition, f64)> = (0..size)
            .map(|_| {
                let i = rng.below(buffer.len());
                (&buffer[i], returns[i])
            })
            .collect();
        learner.minibatch_step(&batch, cfg)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLog {
    pub end_step: usize,
    pub performance: f64,
    pub reward: Option<f64>,
    pub action_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OnlineLog {
    pub segments: Vec<SegmentLog>,
    pub controller_updates: usize,
    /// Set when the task diverged and the run stopped early.
    pub aborted: Option<String>,
}

impl OnlineLog {
    pub fn final_performance(&self) -> Option<f64> {
        self.segments.last().map(|s| s.performance)
    }
}

/// One continuous task run: act with the behavior policy, score every
/// segment, and update the controller as transitions accumulate.
pub fn train_controller_online(
    task: &mut dyn TaskProcess,
    learner: &mut PpoLearner,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<OnlineLog> {
    cfg.validate()?;
    let (segment_len, total_steps) = match task.episode_mode() {
        EpisodeMode::Segments {
            segment_len,
            total_steps,
        } => (segment_len, total_steps),
        EpisodeMode::UntilConvergence { .. } => {
            return Err(Error::InvalidArgument("online training needs a segment-mode task".into()))
        }
    };
    if segment_len == 0 {
        return Err(Error::InvalidArgument("segment length must be positive".into()));
    }
    let q = task.action_space().len();
    if learner.actor.num_actions() != q || learner.actor.input_dim() != task.feature_dim() {
        return Err(Error::Dimension {
            context: "controller vs task",
            expected: task.feature_dim(),
            got: learner.actor.input_dim(),
        });
    }
    let mut act_rng = rng.split("act");
    let mut upd_rng = rng.split("update");
    let mut rewards = SegmentRewardState::new(cfg.lookback, cfg.reward_scale, cfg.denom_floor)?;
    rewards.push(task.performance());
    let mut buffer: VecDeque<Transition> = VecDeque::with_capacity(cfg.capacity);
    let mut log = OnlineLog::default();
    let mut step = 0usize;
    while step < total_steps {
        let mut pending = Vec::with_capacity(segment_len);
        let mut counts = vec![0usize; q];
        let end = (step + segment_len).min(total_steps);
        while step < end {
            let x = task.features();
            if x.iter().any(|v| !v.is_finite()) {
                log.aborted = Some(format!("non-finite features at step {step}"));
                log.controller_updates = learner.updates();
                return Ok(log);
            }
            let (y, logp) = learner.behavior.sample(&x, &mut act_rng)?;
            if let Err(e) = task.apply_action(y) {
                log.aborted = Some(e.to_string());
                log.controller_updates = learner.updates();
                return Ok(log);
            }
            counts[y] += 1;
            pending.push((x, y, logp));
            step += 1;
        }
        let performance = task.performance();
        if !performance.is_finite() {
            log.aborted = Some(format!("non-finite performance at step {step}"));
            break;
        }
        let reward = rewards.push(performance);
        let r = reward.unwrap_or(0.0).clamp(-cfg.reward_clip, cfg.reward_clip);
        let last = pending.len() - 1;
        for (i, (state, decision, behavior_log_prob)) in pending.into_iter().enumerate() {
            if buffer.len() == cfg.capacity {
                buffer.pop_front();
            }
            buffer.push_back(Transition {
                state,
                decision,
                behavior_log_prob,
                reward: r,
                done: step >= total_steps && i == last,
            });
        }
        if buffer.len() >= cfg.minibatch {
            let contiguous: Vec<Transition> = buffer.iter().cloned().collect();
            ppo_update(learner, &contiguous, cfg, &mut upd_rng)?;
        }
        log.segments.push(SegmentLog {
            end_step: step,
            performance,
            reward,
            action_counts: counts,
        });
    }
    log.controller_updates = learner.updates();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_reward_examples() {
        let mut s = SegmentRewardState::new(1, 1.0, 1e-6).unwrap();
        assert_eq!(s.push(1.0), None);
        assert_eq!(s.push(2.0), None);
        assert_eq!(s.push(3.0), Some(1.0));
        assert_eq!(s.push(3.0), Some(0.0));
        let mut s = SegmentRewardState::new(1, 1.0, 1e-6).unwrap();
        s.push(1.0);
        s.push(1.0);
        assert_eq!(s.push(1.5), Some(0.5 / 1e-6));
    }

    #[test]
    fn returns_recurrence() {
        let trs: Vec<Transition> = [1.0, 0.0, 2.0]
            .iter()
            .map(|&r| Transition {
                state: vec![],
                decision: 0,
                behavior_log_prob: 0.0,
                reward: r,
                done: false,
            })
            .collect();
        let g = discounted_returns(&trs, 0.5);
        assert_eq!(g, vec![1.5, 1.0, 2.0]);
    }

    #[test]
    fn surrogate_is_pessimistic() {
        // min(r·A, clip(r)·A) never exceeds r·A, whatever the sign of A
        for &r in &[0.5, 0.9, 1.0, 1.1, 1.5] {
            for &a in &[-2.0, -0.5, 0.5, 2.0] {
                assert!(clipped_surrogate(r, a, 0.2) <= r * a);
            }
        }
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
    }
}
