//! GAN on a 2-D Gaussian mixture: fixed update ratios, the online PPO
//! controller, and a frozen controller guiding other architectures.

use anyhow::{anyhow, Result};
use autoloss_core::baselines::{FixedGanSchedule, UniformSchedule};
use autoloss_core::controller::ControllerPolicy;
use autoloss_core::gan::{sample_gan_architecture, GanArch, GanConfig, GanTask, MixtureSpec, GEN_LOSS};
use autoloss_core::numkit::Rng;
use autoloss_core::ppo::{train_controller_online, OnlineLog, PpoConfig, PpoLearner};
use autoloss_core::sched::{GuidanceMode, PolicySchedule, Schedule, TaskProcess};
use autoloss_core::Error;

use super::{drive, RunRecord};
use crate::config::ExperimentConfig;

pub const NUM_ACTIONS: usize = 2;

#[derive(Debug, Clone)]
pub struct GanSuite {
    gan: GanConfig,
    mixture: MixtureSpec,
    ppo: PpoConfig,
    ratios: Vec<String>,
    fail_threshold: f64,
    root: Rng,
}

fn share_of(actions: &[usize], a: usize) -> f64 {
    if actions.is_empty() {
        return f64::NAN;
    }
    actions.iter().filter(|x| **x == a).count() as f64 / actions.len() as f64
}

fn failed_record(arm: &str, trial: usize, knob: f64, task: &GanTask) -> RunRecord {
    RunRecord::new(
        arm,
        trial,
        knob,
        vec![
            ("inception_score".into(), f64::NAN),
            ("disc_error".into(), f64::NAN),
            ("gen_share".into(), f64::NAN),
            ("steps".into(), task.step_count() as f64),
            ("batches".into(), task.batches_scanned() as f64),
            ("failed".into(), 1.0),
        ],
    )
}

impl GanSuite {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(GanSuite {
            gan: cfg.gan_config()?,
            mixture: cfg.mixture()?,
            ppo: cfg.ppo_config()?,
            ratios: cfg.gan_ratios(),
            fail_threshold: cfg.f64("gan.fail_threshold")?,
            root: Rng::new(cfg.seed()?).split("gan"),
        })
    }

    pub fn ratios(&self) -> &[String] {
        &self.ratios
    }

    pub fn base_arch(&self) -> GanArch {
        self.gan.arch
    }

    /// Runs whose final IS is below this count as failed for transfer.
    pub fn fail_threshold(&self) -> f64 {
        self.fail_threshold
    }

    /// The `i`-th sampled architecture for model transfer.
    pub fn sampled_arch(&self, i: usize) -> GanArch {
        sample_gan_architecture(&mut self.root.split_indexed("arch", i as u64))
    }

    /// A variant whose real data is a different ring, for data transfer.
    pub fn with_mixture(&self, mixture: MixtureSpec) -> Self {
        GanSuite {
            mixture,
            ..self.clone()
        }
    }

    fn task(&self, trial: usize, arch: GanArch) -> Result<GanTask> {
        let cfg = GanConfig {
            arch,
            ..self.gan.clone()
        };
        Ok(GanTask::new(cfg, self.mixture.clone(), &mut self.root.split_indexed("task", trial as u64))?)
    }

    fn run_schedule(
        &self,
        arm: &str,
        trial: usize,
        knob: f64,
        arch: GanArch,
        schedule: &mut dyn Schedule,
    ) -> Result<RunRecord> {
        let mut task = self.task(trial, arch)?;
        match drive(&mut task, schedule, &mut self.root.split_indexed("run", trial as u64)) {
            Ok((metrics, actions)) => {
                let mut rec = RunRecord::new(arm, trial, knob, metrics);
                rec.set("gen_share", share_of(&actions, GEN_LOSS));
                rec.set("failed", 0.0);
                Ok(rec)
            }
            Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => Ok(failed_record(arm, trial, knob, &task)),
            Err(e) => Err(e.into()),
        }
    }

    /// A fixed `G:D` ratio (e.g. `1:3`) or `uniform`.
    pub fn baseline(&self, name: &str, trial: usize, arch: Option<GanArch>) -> Result<RunRecord> {
        let arch = arch.unwrap_or(self.gan.arch);
        if name == "uniform" {
            return self.run_schedule(name, trial, f64::NAN, arch, &mut UniformSchedule(NUM_ACTIONS));
        }
        let label = name.strip_prefix("fixed_").unwrap_or(name);
        let mut schedule = FixedGanSchedule::parse(label)
            .map_err(|e| anyhow!("unknown GAN baseline {name:?} ({e}); use uniform or a ratio like 1:3"))?;
        self.run_schedule(&format!("fixed_{label}"), trial, f64::NAN, arch, &mut schedule)
    }

    /// One online PPO run: the controller learns while it schedules.
    pub fn online(&self, trial: usize, arch: Option<GanArch>) -> Result<(RunRecord, OnlineLog, PpoLearner)> {
        let arch = arch.unwrap_or(self.gan.arch);
        let mut task = self.task(trial, arch)?;
        let mut learner = PpoLearner::fresh(
            task.feature_dim(),
            NUM_ACTIONS,
            &self.ppo,
            &mut self.root.split_indexed("ppo", trial as u64),
        )?;
        let log = train_controller_online(
            &mut task,
            &mut learner,
            &self.ppo,
            &mut self.root.split_indexed("online", trial as u64),
        )?;
        let rec = if log.aborted.is_some() {
            failed_record("autoloss", trial, f64::NAN, &task)
        } else {
            let mut rec = RunRecord::new("autoloss", trial, f64::NAN, task.final_metrics());
            let (gen, all) = log.segments.iter().fold((0, 0), |(g, a), s| {
                (g + s.action_counts[GEN_LOSS], a + s.action_counts.iter().sum::<usize>())
            });
            rec.set("gen_share", gen as f64 / all.max(1) as f64);
            rec.set("failed", 0.0);
            rec
        };
        Ok((rec, log, learner))
    }

    /// A fresh model of architecture `arch` under a frozen controller.
    pub fn guide(&self, actor: &ControllerPolicy, trial: usize, arch: Option<GanArch>) -> Result<RunRecord> {
        let arch = arch.unwrap_or(self.gan.arch);
        let mut schedule = PolicySchedule {
            policy: actor,
            mode: GuidanceMode::Sample,
        };
        self.run_schedule("autoloss", trial, f64::NAN, arch, &mut schedule)
    }
}
