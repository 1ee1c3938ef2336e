//! Regression and classification: controller training on the controller
//! splits, guidance and baselines on the task splits.

use std::sync::Arc;

use anyhow::{anyhow, bail, Result};
use autoloss_core::baselines::{
    dense_grid_search, tune_threshold, ConstantSchedule, GridSearchSpec, HeuristicKind, HeuristicSchedule,
    SearchResult, SearchRow, UniformSchedule,
};
use autoloss_core::controller::{Architecture, ControllerPolicy};
use autoloss_core::numkit::Rng;
use autoloss_core::reinforce::{train_controller, ReinforceConfig, TrainingLog};
use autoloss_core::sched::{run_guided_training, GuidanceMode, Schedule, TaskProcess};
use autoloss_core::tasks::data::{
    synth_classification_data, synth_regression_data, ClassificationSpec, SplitSet, SupervisedDataset,
};
use autoloss_core::tasks::models::{MlpModel, RegressionModel};
use autoloss_core::tasks::supervised::{Objective, SupervisedConfig, SupervisedTask};

use super::RunRecord;
use crate::config::{ExperimentConfig, TaskKind};

pub const NUM_ACTIONS: usize = 2;

/// Supervised baselines by name.
pub const BASELINES: &[&str] = &["no_l1", "combined", "dgs", "s1", "s2", "s3", "uniform"];

#[derive(Debug, Clone)]
pub struct TrialData {
    pub data: Arc<SupervisedDataset>,
    pub splits: SplitSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Controller,
    Task,
}

/// The outcome of a baseline on one trial. Searched baselines keep every
/// grid run so budgets can be replayed.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub record: RunRecord,
    pub search: Option<SearchResult>,
}

#[derive(Debug, Clone)]
pub struct SupervisedSuite {
    kind: TaskKind,
    sup: SupervisedConfig,
    reinforce: ReinforceConfig,
    arch: Architecture,
    guidance: GuidanceMode,
    class_spec: ClassificationSpec,
    d: usize,
    samples: usize,
    noise_std: f64,
    hidden: (usize, usize),
    init_scale: f64,
    fractions: [f64; 5],
    dgs: GridSearchSpec,
    thresholds: Vec<f64>,
    root: Rng,
    data_stream: String,
}

impl SupervisedSuite {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let kind = cfg.kind();
        if !kind.is_supervised() {
            bail!("task.kind {} is not a supervised task", kind.tag());
        }
        let guidance = match cfg.get("controller.guidance") {
            "sample" => GuidanceMode::Sample,
            "greedy" => GuidanceMode::Greedy,
            other => bail!("controller.guidance must be sample or greedy, got {other:?}"),
        };
        Ok(SupervisedSuite {
            kind,
            sup: cfg.supervised_config()?,
            reinforce: cfg.reinforce_config()?,
            arch: cfg.controller_arch()?,
            guidance,
            class_spec: cfg.classification_spec()?,
            d: cfg.usize("task.d")?,
            samples: cfg.usize("task.samples")?,
            noise_std: cfg.f64("task.noise_std")?,
            hidden: cfg.mlp_hidden()?,
            init_scale: cfg.f64("task.init_scale")?,
            fractions: cfg.split_fractions()?,
            dgs: cfg.dgs_spec()?,
            thresholds: cfg.threshold_grid()?,
            root: Rng::new(cfg.seed()?).split(kind.tag()),
            data_stream: "data".into(),
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn task_config(&self) -> &SupervisedConfig {
        &self.sup
    }

    pub fn lambda(&self) -> f64 {
        self.sup.l1_weight
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.sup.l1_weight = lambda;
    }

    pub fn reinforce_config(&self) -> &ReinforceConfig {
        &self.reinforce
    }

    pub fn set_budget(&mut self, max_batches: Option<u64>) {
        self.reinforce.max_batches = max_batches;
    }

    /// A variant drawing its datasets from a separate stream with a different
    /// class separation, for data transfer.
    pub fn transferred_data(&self, index: usize, class_sep: f64) -> Self {
        let mut out = self.clone();
        out.class_spec.class_sep = class_sep;
        out.data_stream = format!("transfer-data-{index}");
        out
    }

    /// A variant with different hidden widths, for model transfer.
    pub fn transferred_model(&self, hidden: (usize, usize)) -> Self {
        let mut out = self.clone();
        out.hidden = hidden;
        out
    }

    pub fn dataset(&self, trial: usize) -> Result<TrialData> {
        let mut r = self.root.split_indexed(&self.data_stream, trial as u64);
        let data = match self.kind {
            TaskKind::Regression => synth_regression_data(self.d, self.samples, self.noise_std, &mut r)?,
            _ => synth_classification_data(
                ClassificationSpec {
                    d: self.d,
                    p: self.samples,
                    ..self.class_spec
                },
                &mut r,
            )?,
        };
        let splits = SplitSet::new(data.len(), self.fractions, &mut r.split("splits"))?;
        Ok(TrialData {
            data: Arc::new(data),
            splits,
        })
    }

    fn task(
        &self,
        td: &TrialData,
        part: Part,
        sup: SupervisedConfig,
        rng: &mut Rng,
    ) -> autoloss_core::Result<Box<dyn TaskProcess>> {
        let s = &td.splits;
        let (train, val, test) = match part {
            Part::Controller => (&s.train_c, &s.val_c, &s.val_c),
            Part::Task => (&s.train_t, &s.val_t, &s.test),
        };
        let data = td.data.clone();
        Ok(match self.kind {
            TaskKind::Regression => {
                let model = RegressionModel::init(self.d, self.init_scale, rng);
                Box::new(SupervisedTask::new(model, data, train.clone(), val.clone(), test.clone(), sup, rng)?)
            }
            _ => {
                let model = MlpModel::new(self.d, self.hidden.0, self.hidden.1, rng);
                Box::new(SupervisedTask::new(model, data, train.clone(), val.clone(), test.clone(), sup, rng)?)
            }
        })
    }

    fn task_rng(&self, trial: usize) -> Rng {
        self.root.split_indexed("model", trial as u64)
    }

    fn run_rng(&self, trial: usize) -> Rng {
        self.root.split_indexed("run", trial as u64)
    }

    pub fn fresh_policy(&self) -> ControllerPolicy {
        ControllerPolicy::new(
            self.arch,
            self.sup.features.dim(),
            NUM_ACTIONS,
            &mut self.root.split("policy"),
        )
    }

    /// Train a controller with REINFORCE on the controller splits of trial 0.
    pub fn train_controller(&self) -> Result<(ControllerPolicy, TrainingLog)> {
        let td = self.dataset(0)?;
        let mut policy = self.fresh_policy();
        let log = train_controller(
            |ep| {
                let mut r = self.root.split_indexed("episode", ep as u64);
                self.task(&td, Part::Controller, self.sup.clone(), &mut r)
            },
            &mut policy,
            &self.reinforce,
            &self.root.split("reinforce"),
        )?;
        Ok((policy, log))
    }

    /// Train a fresh task model on trial `trial` under the frozen controller.
    pub fn guide(&self, policy: &ControllerPolicy, trial: usize) -> Result<RunRecord> {
        let td = self.dataset(trial)?;
        let mut task = self.task(&td, Part::Task, self.sup.clone(), &mut self.task_rng(trial))?;
        let metrics = run_guided_training(&mut task, policy, self.guidance, &mut self.run_rng(trial))?;
        let mut rec = RunRecord::new("autoloss", trial, self.sup.l1_weight, metrics);
        rec.set("cost_batches", rec.get("batches"));
        Ok(rec)
    }

    fn run_with(
        &self,
        td: &TrialData,
        trial: usize,
        objective: Objective,
        schedule: &mut dyn Schedule,
    ) -> autoloss_core::Result<Vec<(String, f64)>> {
        let sup = SupervisedConfig {
            objective,
            ..self.sup.clone()
        };
        let mut task = self.task(td, Part::Task, sup, &mut self.task_rng(trial))?;
        autoloss_core::sched::run_scheduled_training(&mut task, schedule, &mut self.run_rng(trial))
    }

    fn searched(&self, arm: &str, trial: usize, search: SearchResult) -> BaselineOutcome {
        let best = search.best_row();
        let mut rec = RunRecord::new(arm, trial, best.value, best.metrics.clone());
        rec.set("cost_batches", search.total_batches() as f64);
        BaselineOutcome {
            record: rec,
            search: Some(search),
        }
    }

    pub fn baseline(&self, name: &str, trial: usize) -> Result<BaselineOutcome> {
        let td = self.dataset(trial)?;
        let lambda = self.sup.l1_weight;
        let single = |objective: Objective, schedule: &mut dyn Schedule, knob: f64| -> Result<BaselineOutcome> {
            let metrics = self.run_with(&td, trial, objective, schedule)?;
            let mut rec = RunRecord::new(name, trial, knob, metrics);
            rec.set("cost_batches", rec.get("batches"));
            Ok(BaselineOutcome { record: rec, search: None })
        };
        let scored = |metrics: Vec<(String, f64)>| {
            let val = autoloss_core::sched::metric(&metrics, "val_metric").unwrap_or(f64::NAN);
            let batches = autoloss_core::sched::metric(&metrics, "batches").unwrap_or(0.0) as u64;
            (val, metrics, batches)
        };
        match name {
            "no_l1" => single(Objective::TaskOnly, &mut ConstantSchedule(0), f64::NAN),
            "combined" => single(Objective::Combined { lambda }, &mut ConstantSchedule(0), lambda),
            "uniform" => single(Objective::Alternate, &mut UniformSchedule(NUM_ACTIONS), lambda),
            "dgs" => {
                let search = dense_grid_search(&self.dgs, |l| {
                    let m = self.run_with(&td, trial, Objective::Combined { lambda: l }, &mut ConstantSchedule(0))?;
                    Ok(scored(m))
                })?;
                Ok(self.searched(name, trial, search))
            }
            _ => {
                let kind = HeuristicKind::parse(name)
                    .ok_or_else(|| anyhow!("unknown baseline {name:?}; expected one of {}", BASELINES.join(", ")))?;
                let search = tune_threshold(&self.thresholds, |th| {
                    let m = self.run_with(&td, trial, Objective::Alternate, &mut HeuristicSchedule { kind, th })?;
                    Ok(scored(m))
                })?;
                Ok(self.searched(name, trial, search))
            }
        }
    }
}

/// The best-by-validation grid run among those that fit in `budget` batches
/// when the grid is run in order.
pub fn best_within_budget(search: &SearchResult, budget: u64) -> Option<&SearchRow> {
    let mut spent = 0u64;
    let mut best: Option<&SearchRow> = None;
    for row in &search.rows {
        spent += row.batches;
        if spent > budget {
            break;
        }
        if row.val_metric.is_finite() && best.map_or(true, |b| row.val_metric < b.val_metric) {
            best = Some(row);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, val_metric: f64, batches: u64) -> SearchRow {
        SearchRow {
            value,
            val_metric,
            metrics: vec![],
            batches,
        }
    }

    #[test]
    fn budget_replay_stops_at_the_limit() {
        let s = SearchResult {
            best_value: 3.0,
            best_val_metric: 0.1,
            rows: vec![row(1.0, 0.5, 10), row(2.0, 0.3, 10), row(3.0, 0.1, 10)],
        };
        assert!(best_within_budget(&s, 5).is_none());
        assert_eq!(best_within_budget(&s, 25).unwrap().value, 2.0);
        assert_eq!(best_within_budget(&s, 30).unwrap().value, 3.0);
    }
}
