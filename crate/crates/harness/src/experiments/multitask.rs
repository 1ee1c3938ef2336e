//! Multi-task regression with a shared encoder: the target task plus two
//! auxiliary tasks, scheduled by fixed rules or the online PPO controller.

use std::sync::Arc;

use anyhow::{anyhow, Result};
use autoloss_core::baselines::{ConstantSchedule, FineTunedSchedule, FixedRatioSchedule, UniformSchedule};
use autoloss_core::multialt::{synth_multitask_data, MultiTask, MultiTaskConfig, MultiTaskData, NUM_TASKS, TARGET_TASK};
use autoloss_core::numkit::Rng;
use autoloss_core::ppo::{train_controller_online, OnlineLog, PpoConfig, PpoLearner};
use autoloss_core::sched::{Schedule, TaskProcess};

use super::{drive, thirds_share, RunRecord};
use crate::config::ExperimentConfig;

pub const BASELINES: &[&str] = &["mt_only", "fixed_ratio", "finetuned", "uniform"];

#[derive(Debug, Clone)]
pub struct MultiTaskSuite {
    cfg: MultiTaskConfig,
    ppo: PpoConfig,
    finetune_switch: f64,
    root: Rng,
}

impl MultiTaskSuite {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(MultiTaskSuite {
            cfg: cfg.multitask_config()?,
            ppo: cfg.ppo_config()?,
            finetune_switch: cfg.f64("baselines.finetune_switch")?,
            root: Rng::new(cfg.seed()?).split("multitask"),
        })
    }

    pub fn data(&self, trial: usize) -> Result<Arc<MultiTaskData>> {
        let c = &self.cfg;
        Ok(Arc::new(synth_multitask_data(
            c.d,
            c.latent,
            c.sizes,
            c.noise_std,
            c.val_frac,
            &mut self.root.split_indexed("data", trial as u64),
        )?))
    }

    fn task(&self, trial: usize) -> Result<MultiTask> {
        Ok(MultiTask::new(
            self.data(trial)?,
            self.cfg.clone(),
            &mut self.root.split_indexed("task", trial as u64),
        )?)
    }

    fn finish(arm: &str, trial: usize, task: &mut MultiTask, metrics: Vec<(String, f64)>, shares: (f64, f64)) -> RunRecord {
        let mut rec = RunRecord::new(arm, trial, f64::NAN, metrics);
        rec.set("target_share_first", shares.0);
        rec.set("target_share_last", shares.1);
        rec.set("batches", task.batches_scanned() as f64);
        rec
    }

    pub fn baseline(&self, name: &str, trial: usize) -> Result<RunRecord> {
        let fixed = FixedRatioSchedule::new(&self.cfg.sizes)?;
        let mut schedule: Box<dyn Schedule> = match name {
            "mt_only" => Box::new(ConstantSchedule(TARGET_TASK)),
            "fixed_ratio" => Box::new(fixed),
            "finetuned" => Box::new(FineTunedSchedule {
                base: fixed,
                switch_step: (self.finetune_switch * self.cfg.total_steps as f64).round() as usize,
                target: TARGET_TASK,
            }),
            "uniform" => Box::new(UniformSchedule(NUM_TASKS)),
            _ => return Err(anyhow!("unknown multi-task baseline {name:?}; expected one of {}", BASELINES.join(", "))),
        };
        let mut task = self.task(trial)?;
        let (metrics, actions) = drive(
            &mut task,
            schedule.as_mut(),
            &mut self.root.split_indexed("run", trial as u64),
        )?;
        Ok(Self::finish(name, trial, &mut task, metrics, thirds_share(&actions, TARGET_TASK)))
    }

    /// One online PPO run; the target share is measured per segment.
    pub fn online(&self, trial: usize) -> Result<(RunRecord, OnlineLog, PpoLearner)> {
        let mut task = self.task(trial)?;
        let mut learner = PpoLearner::fresh(
            task.feature_dim(),
            NUM_TASKS,
            &self.ppo,
            &mut self.root.split_indexed("ppo", trial as u64),
        )?;
        let log = train_controller_online(
            &mut task,
            &mut learner,
            &self.ppo,
            &mut self.root.split_indexed("online", trial as u64),
        )?;
        if let Some(reason) = &log.aborted {
            return Err(anyhow!("multi-task run {trial} diverged: {reason}"));
        }
        let shares = segment_thirds_share(&log, TARGET_TASK);
        let metrics = task.final_metrics();
        Ok((Self::finish("autoloss", trial, &mut task, metrics, shares), log, learner))
    }
}

/// Target share over the first and last thirds of the segments.
pub fn segment_thirds_share(log: &OnlineLog, target: usize) -> (f64, f64) {
    let n = log.segments.len();
    let third = n / 3;
    if third == 0 {
        return (f64::NAN, f64::NAN);
    }
    let share = |segs: &[autoloss_core::ppo::SegmentLog]| {
        let (t, all) = segs.iter().fold((0, 0), |(t, a), s| {
            (t + s.action_counts[target], a + s.action_counts.iter().sum::<usize>())
        });
        t as f64 / all.max(1) as f64
    };
    (share(&log.segments[..third]), share(&log.segments[n - third..]))
}
