//! Episode-level REINFORCE with a moving-average reward baseline.

use crate::controller::{ControllerPolicy, PolicyGrad, PolicyOptimizer};
use crate::error::{Error, Result};
use crate::numkit::{self, Rng};
use crate::sched::{run_policy_episode, EpisodeTrace, TaskProcess};

/// Exponential moving average of received rewards. The first reward
/// initializes it directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineState {
    value: f64,
    decay: f64,
    initialized: bool,
}

impl BaselineState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("baseline decay {decay} outside [0, 1)")));
        }
        Ok(BaselineState {
            value: 0.0,
            decay,
            initialized: false,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Fold one reward in: `B ← ηB + (1−η)R`.
    pub fn update(&mut self, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        if self.initialized {
            self.value = numkit::ema_update(self.value, reward, self.decay)?;
        } else {
            self.value = reward;
            self.initialized = true;
        }
        Ok(())
    }
}

/// `clip(R − B, −c, c)`; zero before the baseline has seen any reward.
pub fn advantage(reward: f64, baseline: &BaselineState, clip: f64) -> f64 {
    if !baseline.is_initialized() {
        return 0.0;
    }
    (reward - baseline.value()).clamp(-clip, clip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceConfig {
    /// Sequences sampled per policy update.
    pub sequences_per_update: usize,
    pub clip: f64,
    pub baseline_decay: f64,
    pub learning_rate: f64,
    pub max_episodes: usize,
    /// Plateau window: stop once the mean reward of the last `window`
    /// episodes improves by less than `plateau_tol` (relative) on the
    /// `window` before it.
    pub window: usize,
    pub plateau_tol: f64,
    /// Stop once this many task batches have been scanned in total.
    pub max_batches: Option<u64>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            sequences_per_update: 1,
            clip: 1.0,
            baseline_decay: 0.9,
            learning_rate: 1e-3,
            max_episodes: 300,
            window: 50,
            plateau_tol: 0.01,
            max_batches: None,
        }
    }
}

impl ReinforceConfig {
    fn validate(&self) -> Result<()> {
        if self.sequences_per_update == 0 {
            return Err(Error::InvalidArgument("sequences per update must be at least 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidArgument(format!("clip range {} must be positive", self.clip)));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("plateau window must be positive".into()));
        }
        Ok(())
    }
}

/// `Σ_t ∇ log p(y_t | x_t)` over one trace.
pub fn trace_score(trace: &EpisodeTrace, policy: &ControllerPolicy) -> Result<PolicyGrad> {
    let mut total = PolicyGrad::zeros(policy.num_params());
    for step in &trace.steps {
        let g = policy.grad_log_prob(&step.features, step.decision.index)?;
        total.add_scaled(&g, 1.0);
    }
    Ok(total)
}

/// `(1/S) Σ_s A_s Σ_t ∇ log p(y_t | x_t)` where each advantage is taken
/// against `baseline` as given (no update happens here).
pub fn estimate_policy_gradient(
    traces: &[EpisodeTrace],
    baseline: &BaselineState,
    clip: f64,
    policy: &ControllerPolicy,
) -> Result<PolicyGrad> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to estimate a gradient from".into()));
    }
    let mut grad = PolicyGrad::zeros(policy.num_params());
    for trace in traces {
        let reward = trace
            .reward
            .ok_or_else(|| Error::InvalidArgument("trace without a reward".into()))?;
        let adv = advantage(reward, baseline, clip);
        if adv == 0.0 {
            continue;
        }
        grad.add_scaled(&trace_score(trace, policy)?, adv);
    }
    grad.scale(1.0 / traces.len() as f64);
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub reward: f64,
    pub baseline: f64,
    pub advantage: f64,
    pub steps: usize,
    pub batches: u64,
    pub action_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    pub discarded: usize,
    /// Task batches scanned over the whole run, discarded episodes included.
    pub batches_scanned: u64,
    pub stopped_on_plateau: bool,
}

impl TrainingLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward).collect()
    }
}

/// True when the last `window` rewards improved by less than `tol` (relative)
/// over the `window` before them.
pub fn reward_plateaued(rewards: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || rewards.len() < 2 * window {
        return false;
    }
    let n = rewards.len();
    let last = numkit::mean(&rewards[n - window..]);
    let prev = numkit::mean(&rewards[n - 2 * window..n - window]);
    (last - prev) < tol * prev.abs()
}

/// Train `policy` in place. `make_task(episode)` must return a freshly
/// initialized task on the controller-training splits.
pub fn train_controller<T, F>(
    mut make_task: F,
    policy: &mut ControllerPolicy,
    cfg: &ReinforceConfig,
    rng: &Rng,
) -> Result<TrainingLog>
where
    T: TaskProcess,
    F: FnMut(usize) -> Result<T>,
{
    cfg.validate()?;
    let mut optimizer = PolicyOptimizer::adam(policy.num_params(), cfg.learning_rate);
    let mut baseline = BaselineState::new(cfg.baseline_decay)?;
    let mut log = TrainingLog::default();
    let mut episode = 0usize;
    let mut attempts = 0usize;
    while episode < cfg.max_episodes {
        if cfg.max_batches.is_some_and(|b| log.batches_scanned >= b) {
            break;
        }
        let mut traces = Vec::with_capacity(cfg.sequences_per_update);
        while traces.len() < cfg.sequences_per_update && attempts < cfg.max_episodes * 4 + 16 {
            let mut ep_rng = rng.split_indexed("episode", attempts as u64);
            attempts += 1;
            let mut task = make_task(attempts - 1)?;
            let max_steps = task.episode_mode().max_steps();
            match run_policy_episode(&mut task, policy, max_steps, &mut ep_rng) {
                Ok(trace) if trace.reward.is_some_and(f64::is_finite) => {
                    log.batches_scanned += trace.batches_scanned;
                    traces.push(trace);
                }
                Ok(trace) => {
                    log.batches_scanned += trace.batches_scanned;
                    log.discarded += 1;
                }
                Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {
                    log.batches_scanned += task.batches_scanned();
                    log.discarded += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if traces.is_empty() {
            break;
        }
        let grad = estimate_policy_gradient(&traces, &baseline, cfg.clip, policy)?;
        for trace in &traces {
            let reward = trace.reward.unwrap_or_default();
            let adv = advantage(reward, &baseline, cfg.clip);
            baseline.update(reward)?;
            log.episodes.push(EpisodeLog {
                episode,
                reward,
                baseline: baseline.value(),
                advantage: adv,
                steps: trace.steps_used,
                batches: trace.batches_scanned,
                action_counts: trace.action_counts(policy.num_actions()),
            });
            episode += 1;
        }
        policy.apply_policy_update(&grad, &mut optimizer)?;
        if reward_plateaued(&log.rewards(), cfg.window, cfg.plateau_tol) {
            log.stopped_on_plateau = true;
            break;
        }
    }
    Ok(log)
}
