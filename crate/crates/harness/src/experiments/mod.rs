//! Experiment drivers. Every arm of every experiment produces [`RunRecord`]s
//! with the same metric schema per task kind, so a guided run and a baseline
//! land in the same table.

use autoloss_core::sched::{run_episode, Schedule, TaskProcess};
use autoloss_core::numkit::Rng;

use crate::config::TaskKind;
use crate::csvio::{Cell, Table};

pub mod gan;
pub mod multitask;
pub mod supervised;

pub const SUPERVISED_COLUMNS: &[&str] = &[
    "test_metric",
    "val_metric",
    "test_adjusted",
    "sparsity",
    "steps",
    "batches",
    "cost_batches",
];

pub const GAN_COLUMNS: &[&str] = &["inception_score", "disc_error", "gen_share", "steps", "batches", "failed"];

pub const MULTITASK_COLUMNS: &[&str] = &[
    "target_val_loss",
    "target_performance",
    "target_share_first",
    "target_share_last",
    "steps",
    "batches",
];

pub fn metric_columns(kind: TaskKind) -> &'static [&'static str] {
    match kind {
        TaskKind::Regression | TaskKind::Classification => SUPERVISED_COLUMNS,
        TaskKind::Gan => GAN_COLUMNS,
        TaskKind::MultiTask => MULTITASK_COLUMNS,
    }
}

/// One finished training run of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// What the run belongs to within a table: `base`, a swept λ, a
    /// transfer target.
    pub group: String,
    pub arm: String,
    pub trial: usize,
    /// The arm's tuned or swept knob (λ, threshold, ratio), NaN if none.
    pub knob: f64,
    pub metrics: Vec<(String, f64)>,
}

impl RunRecord {
    pub fn new(arm: impl Into<String>, trial: usize, knob: f64, metrics: Vec<(String, f64)>) -> Self {
        RunRecord {
            group: "base".into(),
            arm: arm.into(),
            trial,
            knob,
            metrics,
        }
    }

    /// Metric by name; NaN when the run does not report it.
    pub fn get(&self, name: &str) -> f64 {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.group = group.into();
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        match self.metrics.iter_mut().find(|(k, _)| k == name) {
            Some(slot) => slot.1 = value,
            None => self.metrics.push((name.to_string(), value)),
        }
    }
}

/// Records as a table with the standard columns for `kind`.
pub fn records_table(kind: TaskKind, records: &[RunRecord]) -> Table {
    let cols = metric_columns(kind);
    let mut header = vec!["group", "arm", "trial", "knob"];
    header.extend_from_slice(cols);
    let mut table = Table::new(&header);
    for r in records {
        let mut row: Vec<Cell> = vec![r.group.clone().into(), r.arm.clone().into(), r.trial.into(), r.knob.into()];
        row.extend(cols.iter().map(|c| Cell::Num(r.get(c))));
        table.push(row);
    }
    table
}

/// Fraction of `target` decisions in the first and last thirds of a run.
pub fn thirds_share(actions: &[usize], target: usize) -> (f64, f64) {
    let n = actions.len();
    let third = n / 3;
    if third == 0 {
        return (f64::NAN, f64::NAN);
    }
    let share = |s: &[usize]| s.iter().filter(|a| **a == target).count() as f64 / s.len() as f64;
    (share(&actions[..third]), share(&actions[n - third..]))
}

/// Drive a task to its end with `schedule`; returns the final metrics and the
/// decision sequence.
pub fn drive(
    task: &mut dyn TaskProcess,
    schedule: &mut dyn Schedule,
    rng: &mut Rng,
) -> autoloss_core::Result<(Vec<(String, f64)>, Vec<usize>)> {
    let max_steps = task.episode_mode().max_steps();
    let trace = run_episode(task, schedule, max_steps, rng)?;
    let actions = trace.steps.iter().map(|s| s.decision.index).collect();
    Ok((task.final_metrics(), actions))
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    autoloss_core::numkit::mean(&v)
}
