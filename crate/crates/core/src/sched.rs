//! Iterative-alternate optimization: at every step a schedule picks one
//! (loss, parameter-group) action from the task's action space and the task
//! performs one update of that group with respect to that loss.

use crate::controller::ControllerPolicy;
use crate::error::{check_dim, Error, Result};
use crate::features::HistoryCache;
use crate::numkit::Rng;

/// A legitimate (loss index, parameter-group index) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub loss_id: usize,
    pub group_id: usize,
}

impl Action {
    pub fn new(loss_id: usize, group_id: usize) -> Self {
        Action { loss_id, group_id }
    }
}

/// Ordered, duplicate-free, non-empty list of actions. Decision indices
/// refer to positions in this list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    actions: Vec<Action>,
}

impl ActionSpace {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("empty action space".into()));
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate action {a:?}")));
            }
        }
        Ok(ActionSpace { actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<Action> {
        self.actions.get(index).copied().ok_or(Error::InvalidAction {
            index,
            size: self.actions.len(),
        })
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
}

/// One-hot decision over `Q` actions, stored as the chosen index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub index: usize,
    pub num_actions: usize,
}

impl Decision {
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_actions];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    /// Run until the task reports convergence (or the step cap); one reward at the end.
    UntilConvergence { max_steps: usize },
    /// Fixed-length segments with a reward after each one.
    Segments { segment_len: usize, total_steps: usize },
}

impl EpisodeMode {
    pub fn max_steps(&self) -> usize {
        match self {
            EpisodeMode::UntilConvergence { max_steps } => *max_steps,
            EpisodeMode::Segments { total_steps, .. } => *total_steps,
        }
    }
}

/// A pluggable alternate-optimization process.
///
/// `apply_action` must only modify the parameter group named by the action
/// and must keep `features()` at a fixed dimension for the task's lifetime.
pub trait TaskProcess {
    fn action_space(&self) -> &ActionSpace;
    fn feature_dim(&self) -> usize;
    fn features(&self) -> Vec<f64>;
    fn cache(&self) -> &HistoryCache;
    fn apply_action(&mut self, action_index: usize) -> Result<()>;
    fn step_count(&self) -> usize;
    fn converged(&self) -> bool;
    fn episode_mode(&self) -> EpisodeMode;
    /// Reward for the controller, computed from the current parameters.
    fn reward(&mut self) -> f64;
    /// Scalar performance `P` used by segment rewards. For tasks where lower
    /// is better this is reported as-is; the segment formula handles sign.
    fn performance(&mut self) -> f64;
    fn batches_scanned(&self) -> u64;
    /// Held-out metrics, named, for reporting.
    fn final_metrics(&mut self) -> Vec<(String, f64)>;
}

impl<T: TaskProcess + ?Sized> TaskProcess for Box<T> {
    fn action_space(&self) -> &ActionSpace {
        (**self).action_space()
    }
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn features(&self) -> Vec<f64> {
        (**self).features()
    }
    fn cache(&self) -> &HistoryCache {
        (**self).cache()
    }
    fn apply_action(&mut self, action_index: usize) -> Result<()> {
        (**self).apply_action(action_index)
    }
    fn step_count(&self) -> usize {
        (**self).step_count()
    }
    fn converged(&self) -> bool {
        (**self).converged()
    }
    fn episode_mode(&self) -> EpisodeMode {
        (**self).episode_mode()
    }
    fn reward(&mut self) -> f64 {
        (**self).reward()
    }
    fn performance(&mut self) -> f64 {
        (**self).performance()
    }
    fn batches_scanned(&self) -> u64 {
        (**self).batches_scanned()
    }
    fn final_metrics(&mut self) -> Vec<(String, f64)> {
        (**self).final_metrics()
    }
}

/// What a schedule sees when it decides.
pub struct Observation<'a> {
    pub step: usize,
    pub features: &'a [f64],
    pub cache: &'a HistoryCache,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub index: usize,
    /// `ln p(index | state)`; 0 for deterministic schedules.
    pub log_prob: f64,
}

/// Anything that can pick the next action: a learned controller or a fixed
/// baseline schedule.
pub trait Schedule {
    fn decide(&mut self, obs: &Observation<'_>, rng: &mut Rng) -> Result<Choice>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceMode {
    #[default]
    Sample,
    Greedy,
}

/// Drives a task with a controller policy.
pub struct PolicySchedule<'p> {
    pub policy: &'p ControllerPolicy,
    pub mode: GuidanceMode,
}

impl<'p> PolicySchedule<'p> {
    pub fn sampling(policy: &'p ControllerPolicy) -> Self {
        PolicySchedule {
            policy,
            mode: GuidanceMode::Sample,
        }
    }
}

impl Schedule for PolicySchedule<'_> {
    fn decide(&mut self, obs: &Observation<'_>, rng: &mut Rng) -> Result<Choice> {
        let (index, log_prob) = match self.mode {
            GuidanceMode::Sample => self.policy.sample(obs.features, rng)?,
            GuidanceMode::Greedy => self.policy.greedy(obs.features)?,
        };
        Ok(Choice { index, log_prob })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub features: Vec<f64>,
    pub decision: Decision,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub reward: Option<f64>,
    pub steps_used: usize,
    pub batches_scanned: u64,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn action_counts(&self, num_actions: usize) -> Vec<usize> {
        let mut counts = vec![0; num_actions];
        for s in &self.steps {
            counts[s.decision.index] += 1;
        }
        counts
    }
}

fn check_schedule_dims(task: &dyn TaskProcess, policy: Option<&ControllerPolicy>) -> Result<()> {
    if let Some(p) = policy {
        check_dim("policy input vs task features", task.feature_dim(), p.input_dim())?;
        check_dim("policy output vs action space", task.action_space().len(), p.num_actions())?;
    }
    Ok(())
}

/// Run up to `max_steps` steps (stopping early when the task converges),
/// recording every decision, then attach the task's reward.
pub fn run_episode(
    task: &mut dyn TaskProcess,
    schedule: &mut dyn Schedule,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<EpisodeTrace> {
    let num_actions = task.action_space().len();
    let start_batches = task.batches_scanned();
    let mut trace = EpisodeTrace::default();
    for t in 0..max_steps {
        if task.converged() {
            break;
        }
        let features = task.features();
        let choice = schedule.decide(
            &Observation {
                step: t,
                features: &features,
                cache: task.cache(),
            },
            rng,
        )?;
        if choice.index >= num_actions {
            return Err(Error::InvalidAction {
                index: choice.index,
                size: num_actions,
            });
        }
        if !choice.log_prob.is_finite() {
            return Err(Error::NonFinite("decision log-probability"));
        }
        task.apply_action(choice.index)?;
        trace.steps.push(TraceStep {
            features,
            decision: Decision {
                index: choice.index,
                num_actions,
            },
            log_prob: choice.log_prob,
        });
    }
    trace.steps_used = trace.steps.len();
    trace.batches_scanned = task.batches_scanned() - start_batches;
    trace.reward = Some(task.reward());
    Ok(trace)
}

/// [`run_episode`] with a controller policy, checking dimensions first.
pub fn run_policy_episode(
    task: &mut dyn TaskProcess,
    policy: &ControllerPolicy,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<EpisodeTrace> {
    check_schedule_dims(task, Some(policy))?;
    run_episode(task, &mut PolicySchedule::sampling(policy), max_steps, rng)
}

/// Train a fresh task model under a frozen policy until convergence and
/// return its held-out metrics. The policy is never updated.
pub fn run_guided_training(
    task: &mut dyn TaskProcess,
    policy: &ControllerPolicy,
    mode: GuidanceMode,
    rng: &mut Rng,
) -> Result<Vec<(String, f64)>> {
    check_schedule_dims(task, Some(policy))?;
    let max_steps = task.episode_mode().max_steps();
    run_episode(task, &mut PolicySchedule { policy, mode }, max_steps, rng)?;
    Ok(task.final_metrics())
}

/// Same as [`run_guided_training`] for any schedule.
pub fn run_scheduled_training(
    task: &mut dyn TaskProcess,
    schedule: &mut dyn Schedule,
    rng: &mut Rng,
) -> Result<Vec<(String, f64)>> {
    let max_steps = task.episode_mode().max_steps();
    run_episode(task, schedule, max_steps, rng)?;
    Ok(task.final_metrics())
}

pub fn metric(metrics: &[(String, f64)], name: &str) -> Option<f64> {
    metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_space_validation() {
        assert!(ActionSpace::new(vec![]).is_err());
        assert!(ActionSpace::new(vec![Action::new(0, 0), Action::new(0, 0)]).is_err());
        let s = ActionSpace::new(vec![Action::new(0, 0), Action::new(1, 0)]).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.get(2).is_err());
    }

    #[test]
    fn decision_one_hot() {
        let d = Decision {
            index: 1,
            num_actions: 3,
        };
        assert_eq!(d.one_hot(), vec![0.0, 1.0, 0.0]);
    }
}
