//! The subcommands behind the `autoloss` binary. Each one writes its outputs
//! into the `--out` directory next to a `<name>.config.txt` echo of the
//! resolved configuration, and refuses to overwrite without `force`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use autoloss_core::baselines::log_grid;
use autoloss_core::controller::ControllerPolicy;
use autoloss_core::gan::MixtureSpec;
use autoloss_core::multialt::{MultiTaskConfig, NUM_TASKS};
use autoloss_core::numkit::Rng;
use autoloss_core::ppo::OnlineLog;
use autoloss_core::reinforce::TrainingLog;
use autoloss_core::tasks::data::encode_dataset;

use crate::config::{ExperimentConfig, TaskKind};
use crate::csvio::{Cell, Table};
use crate::experiments::gan::GanSuite;
use crate::experiments::multitask::MultiTaskSuite;
use crate::experiments::supervised::{best_within_budget, SupervisedSuite, BASELINES as SUPERVISED_BASELINES};
use crate::experiments::{multitask, records_table, RunRecord};

pub const CONTROLLER_FILE: &str = "controller.ckpt";
pub const SUMMARY_FILE: &str = "summary.csv";

/// `--mode` of `transfer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    Data,
    Model,
    Both,
}

impl TransferMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "data" => TransferMode::Data,
            "model" => TransferMode::Model,
            "both" => TransferMode::Both,
            _ => bail!("--mode must be data, model or both, got {s:?}"),
        })
    }
}

/// `--lambda-sweep LO:HI:N`, log-spaced.
pub fn parse_lambda_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        bail!("--lambda-sweep expects LO:HI:N, got {s:?}");
    };
    let (lo, hi, n): (f64, f64, usize) = (
        lo.parse().context("sweep LO")?,
        hi.parse().context("sweep HI")?,
        n.parse().context("sweep N")?,
    );
    if n == 1 {
        if !(lo > 0.0) {
            bail!("sweep values must be positive");
        }
        return Ok(vec![lo]);
    }
    Ok(log_grid(lo, hi, n)?)
}

/// Overrides from the command line, applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub ablate: Option<String>,
}

pub fn resolve_config(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::for_task(TaskKind::Regression),
    };
    if let Some(seed) = ov.seed {
        cfg.set("experiment.seed", &seed.to_string())?;
    }
    if let Some(b) = ov.budget {
        cfg.set("budget.max_batches", &b.to_string())?;
    }
    if let Some(f) = &ov.ablate {
        cfg.set("features.ablate", f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Where a command writes, and whether it may overwrite.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub force: bool,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, force: bool) -> Self {
        Output { dir: dir.into(), force }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Create the directory and check that none of `names` exists yet.
    pub fn claim(&self, names: &[String]) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        if !self.force {
            for n in names {
                let p = self.path(n);
                if p.exists() {
                    bail!("{} already exists; pass --force to overwrite", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn write_config(&self, stem: &str, cfg: &ExperimentConfig) -> Result<()> {
        let text = format!("{}# sha256 {}\n", cfg.echo(), cfg.hash());
        let p = self.path(&format!("{stem}.config.txt"));
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }
}

fn labelled(table: Table, cfg: &ExperimentConfig, name: &str) -> Result<Table> {
    Ok(table
        .label("table", name)
        .label("kind", cfg.kind().tag())
        .label("config", cfg.short_hash())
        .label("seed", cfg.seed()?))
}

fn write_records(out: &Output, cfg: &ExperimentConfig, stem: &str, records: &[RunRecord]) -> Result<PathBuf> {
    let path = out.path(&format!("{stem}.csv"));
    labelled(records_table(cfg.kind(), records), cfg, stem)?.write(&path)?;
    out.write_config(stem, cfg)?;
    Ok(path)
}

fn claim_stem(out: &Output, stem: &str, extra: &[&str]) -> Result<()> {
    let mut names = vec![format!("{stem}.csv"), format!("{stem}.config.txt")];
    names.extend(extra.iter().map(|s| s.to_string()));
    out.claim(&names)
}

// ---------------------------------------------------------------- synth

pub fn synth(cfg: &ExperimentConfig, out: &Output) -> Result<Vec<PathBuf>> {
    let kind = cfg.kind();
    match kind {
        TaskKind::Regression | TaskKind::Classification => {
            claim_stem(out, "synth", &["dataset.txt", "splits.txt"])?;
            let suite = SupervisedSuite::new(cfg)?;
            let td = suite.dataset(0)?;
            fs::write(out.path("dataset.txt"), encode_dataset(&td.data))?;
            fs::write(out.path("splits.txt"), td.splits.encode())?;
            let mut t = Table::new(&["split", "size"]);
            for (name, idx) in td.splits.parts() {
                t.push(vec![name.into(), idx.len().into()]);
            }
            if let Some(floor) = td.data.noise_floor(&td.splits.test) {
                t.push(vec!["test_noise_floor".into(), floor.into()]);
            }
            labelled(t, cfg, "synth")?.write(&out.path("synth.csv"))?;
        }
        TaskKind::Gan => {
            claim_stem(out, "synth", &[])?;
            let gcfg = cfg.gan_config()?;
            let samples = cfg
                .mixture()?
                .sample_n(gcfg.train_size, &mut Rng::new(cfg.seed()?).split("gan").split("synth"));
            let mut t = Table::new(&["x", "y"]);
            for i in 0..samples.rows() {
                let r = samples.row(i);
                t.push(vec![r[0].into(), r[1].into()]);
            }
            labelled(t, cfg, "synth")?.write(&out.path("synth.csv"))?;
        }
        TaskKind::MultiTask => {
            claim_stem(out, "synth", &[])?;
            let mcfg: MultiTaskConfig = cfg.multitask_config()?;
            let data = MultiTaskSuite::new(cfg)?.data(0)?;
            let mut cols = vec!["task".to_string(), "split".into(), "target".into()];
            cols.extend((0..mcfg.d).map(|j| format!("x{j}")));
            let colrefs: Vec<&str> = cols.iter().map(String::as_str).collect();
            let mut t = Table::new(&colrefs);
            for (m, task) in data.tasks.iter().enumerate() {
                for (split, idx) in [("train", &task.train), ("val", &task.val)] {
                    for &i in idx {
                        let mut row: Vec<Cell> = vec![m.into(), split.into(), task.targets[i].into()];
                        row.extend(task.inputs.row(i).iter().map(|v| Cell::Num(*v)));
                        t.push(row);
                    }
                }
            }
            labelled(t, cfg, "synth")?.write(&out.path("synth.csv"))?;
        }
    }
    out.write_config("synth", cfg)?;
    Ok(vec![out.path("synth.csv")])
}

// ---------------------------------------------------------------- controller training

fn reinforce_table(log: &TrainingLog) -> Table {
    let mut t = Table::new(&["episode", "reward", "baseline", "advantage", "steps", "batches", "l1_share"]);
    for e in &log.episodes {
        let share = e.action_counts.get(1).copied().unwrap_or(0) as f64 / e.steps.max(1) as f64;
        t.push(vec![
            e.episode.into(),
            e.reward.into(),
            e.baseline.into(),
            e.advantage.into(),
            e.steps.into(),
            (e.batches as f64).into(),
            share.into(),
        ]);
    }
    t.label("discarded", log.discarded)
        .label("plateau", log.stopped_on_plateau)
        .label("batches_total", log.batches_scanned)
}

fn online_table(log: &OnlineLog, num_actions: usize) -> Table {
    let mut cols = vec!["segment".to_string(), "end_step".into(), "performance".into(), "reward".into()];
    cols.extend((0..num_actions).map(|a| format!("share_a{a}")));
    let colrefs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(&colrefs);
    for (i, s) in log.segments.iter().enumerate() {
        let total = s.action_counts.iter().sum::<usize>().max(1) as f64;
        let mut row: Vec<Cell> = vec![
            i.into(),
            s.end_step.into(),
            s.performance.into(),
            s.reward.unwrap_or(f64::NAN).into(),
        ];
        row.extend(s.action_counts.iter().map(|c| Cell::Num(*c as f64 / total)));
        t.push(row);
    }
    t.label("updates", log.controller_updates)
}

/// Train the controller of `cfg`: REINFORCE for supervised tasks, one online
/// PPO run (trial 0) for GAN and multi-task.
pub fn train_controller(cfg: &ExperimentConfig, out: &Output) -> Result<Vec<PathBuf>> {
    claim_stem(out, "controller_log", &[CONTROLLER_FILE])?;
    let ckpt = out.path(CONTROLLER_FILE);
    let table = match cfg.kind() {
        TaskKind::Regression | TaskKind::Classification => {
            let suite = SupervisedSuite::new(cfg)?;
            let (policy, log) = suite.train_controller()?;
            policy.save(&ckpt)?;
            reinforce_table(&log)
        }
        TaskKind::Gan => {
            let (_, log, learner) = GanSuite::new(cfg)?.online(0, None)?;
            learner.actor.save(&ckpt)?;
            online_table(&log, 2)
        }
        TaskKind::MultiTask => {
            let suite = MultiTaskSuite::new(cfg)?;
            let (_, log, learner) = suite.online(0)?;
            learner.actor.save(&ckpt)?;
            online_table(&log, NUM_TASKS)
        }
    };
    labelled(table, cfg, "controller_log")?.write(&out.path("controller_log.csv"))?;
    out.write_config("controller_log", cfg)?;
    Ok(vec![ckpt, out.path("controller_log.csv")])
}

/// The controller in `out` if one was trained there, a fresh one otherwise.
fn supervised_controller(suite: &SupervisedSuite, out: &Output) -> Result<(ControllerPolicy, u64)> {
    let ckpt = out.path(CONTROLLER_FILE);
    if ckpt.exists() && suite.reinforce_config().max_batches.is_none() {
        let dim = suite.task_config().features.dim();
        let policy = ControllerPolicy::load_for(&ckpt, dim, crate::experiments::supervised::NUM_ACTIONS)
            .with_context(|| format!("loading {}", ckpt.display()))?;
        return Ok((policy, 0));
    }
    let (policy, log) = suite.train_controller()?;
    Ok((policy, log.batches_scanned))
}

/// Budget left for controller training once one guided run is reserved.
pub fn controller_budget(cfg: &ExperimentConfig) -> Result<Option<u64>> {
    Ok(cfg
        .budget()?
        .map(|b| b.saturating_sub(cfg.u64("task.max_steps").unwrap_or(0)).max(1)))
}

// ---------------------------------------------------------------- guide

/// Guided runs over every trial. For supervised tasks `lambdas` trains one
/// controller per λ; with a budget the controller's batches count toward
/// each row's `cost_batches`.
pub fn guide(cfg: &ExperimentConfig, out: &Output, lambdas: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    let stem = if lambdas.is_some() { "guide_lambda" } else { "guide" };
    claim_stem(out, stem, &[])?;
    let trials = cfg.trials()?;
    let mut records = Vec::new();
    match cfg.kind() {
        TaskKind::Regression | TaskKind::Classification => {
            let mut suite = SupervisedSuite::new(cfg)?;
            suite.set_budget(controller_budget(cfg)?);
            match lambdas {
                None => {
                    let (policy, spent) = supervised_controller(&suite, out)?;
                    for trial in 0..trials {
                        let mut r = suite.guide(&policy, trial)?;
                        r.set("cost_batches", r.get("batches") + spent as f64);
                        records.push(r);
                    }
                }
                Some(ls) => {
                    for &l in ls {
                        suite.set_lambda(l);
                        let (policy, log) = suite.train_controller()?;
                        for trial in 0..trials {
                            let mut r = suite.guide(&policy, trial)?.in_group(format!("lambda={l}"));
                            r.set("cost_batches", r.get("batches") + log.batches_scanned as f64);
                            records.push(r);
                        }
                    }
                }
            }
        }
        TaskKind::Gan => {
            let suite = GanSuite::new(cfg)?;
            for trial in 0..trials {
                records.push(suite.online(trial, None)?.0);
            }
        }
        TaskKind::MultiTask => {
            let suite = MultiTaskSuite::new(cfg)?;
            for trial in 0..trials {
                records.push(suite.online(trial)?.0);
            }
        }
    }
    Ok(vec![write_records(out, cfg, stem, &records)?])
}

// ---------------------------------------------------------------- baselines

pub fn baseline_names(cfg: &ExperimentConfig) -> Vec<String> {
    match cfg.kind() {
        TaskKind::Regression | TaskKind::Classification => SUPERVISED_BASELINES.iter().map(|s| s.to_string()).collect(),
        TaskKind::Gan => {
            let mut v: Vec<String> = cfg.gan_ratios().iter().map(|r| format!("fixed_{r}")).collect();
            v.push("uniform".into());
            v
        }
        TaskKind::MultiTask => multitask::BASELINES.iter().map(|s| s.to_string()).collect(),
    }
}

/// Run baseline `name` (or `all`) over every trial. Searched supervised
/// baselines also write every grid run to `<stem>_search.csv`.
pub fn baseline(cfg: &ExperimentConfig, out: &Output, name: &str, lambdas: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    let names = if name == "all" {
        baseline_names(cfg)
    } else {
        vec![name.to_string()]
    };
    let safe = name.replace(':', "-");
    let stem = match lambdas {
        Some(_) => format!("baseline_{safe}_lambda"),
        None => format!("baseline_{safe}"),
    };
    let search_stem = format!("{stem}_search");
    claim_stem(out, &stem, &[&format!("{search_stem}.csv"), &format!("{search_stem}.config.txt")])?;
    let trials = cfg.trials()?;
    let budget = cfg.budget()?;
    let mut records = Vec::new();
    let mut search_rows = Vec::new();
    match cfg.kind() {
        TaskKind::Regression | TaskKind::Classification => {
            let mut suite = SupervisedSuite::new(cfg)?;
            let sweep = lambdas.map(|l| l.to_vec()).unwrap_or_else(|| vec![suite.lambda()]);
            for &l in &sweep {
                suite.set_lambda(l);
                let group = if lambdas.is_some() { format!("lambda={l}") } else { "base".into() };
                for n in &names {
                    for trial in 0..trials {
                        let outcome = suite.baseline(n, trial)?;
                        let mut rec = outcome.record.in_group(group.clone());
                        if let Some(search) = &outcome.search {
                            for row in &search.rows {
                                let mut r = RunRecord::new(format!("{n}_point"), trial, row.value, row.metrics.clone())
                                    .in_group(group.clone());
                                r.set("cost_batches", row.batches as f64);
                                search_rows.push(r);
                            }
                            if let Some(b) = budget {
                                match best_within_budget(search, b) {
                                    Some(row) => {
                                        rec = RunRecord::new(n.as_str(), trial, row.value, row.metrics.clone())
                                            .in_group(group.clone());
                                        rec.set("cost_batches", b as f64);
                                    }
                                    None => {
                                        rec.metrics.iter_mut().for_each(|m| m.1 = f64::NAN);
                                        rec.set("cost_batches", b as f64);
                                    }
                                }
                            }
                        }
                        records.push(rec);
                    }
                }
            }
        }
        TaskKind::Gan => {
            let suite = GanSuite::new(cfg)?;
            for n in &names {
                for trial in 0..trials {
                    records.push(suite.baseline(n, trial, None)?);
                }
            }
        }
        TaskKind::MultiTask => {
            let suite = MultiTaskSuite::new(cfg)?;
            for n in &names {
                for trial in 0..trials {
                    records.push(suite.baseline(n, trial)?);
                }
            }
        }
    }
    let mut written = vec![write_records(out, cfg, &stem, &records)?];
    if !search_rows.is_empty() {
        written.push(write_records(out, cfg, &search_stem, &search_rows)?);
    }
    Ok(written)
}

// ---------------------------------------------------------------- transfer

/// Train once on the base setting, then guide new datasets (`data`), new
/// model shapes (`model`) or both, with the reference baselines alongside.
pub fn transfer(cfg: &ExperimentConfig, out: &Output, mode: TransferMode) -> Result<Vec<PathBuf>> {
    claim_stem(out, "transfer", &[])?;
    let trials = cfg.trials()?;
    let mut records = Vec::new();
    match cfg.kind() {
        TaskKind::Regression | TaskKind::Classification => {
            let base = SupervisedSuite::new(cfg)?;
            let (policy, _) = supervised_controller(&base, out)?;
            let seps = cfg.f64_list("transfer.class_seps")?;
            let hidden = cfg.transfer_hidden()?;
            let mut targets: Vec<(String, SupervisedSuite)> = Vec::new();
            let data_targets: Vec<(String, SupervisedSuite)> = seps
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &sep)| (format!("data{j}:sep={sep}"), base.transferred_data(j, sep)))
                .collect();
            if mode != TransferMode::Model {
                targets.extend(data_targets.iter().cloned());
            }
            if mode != TransferMode::Data {
                if cfg.kind() == TaskKind::Regression {
                    bail!("model transfer needs a classification task (the regression model has no width)");
                }
                let sources: Vec<(String, SupervisedSuite)> = if mode == TransferMode::Both {
                    data_targets
                } else {
                    vec![("base".into(), base.clone())]
                };
                for (label, suite) in &sources {
                    for &(a, b) in &hidden {
                        targets.push((format!("{label}:hidden={a}x{b}"), suite.transferred_model((a, b))));
                    }
                }
            }
            for (label, suite) in &targets {
                for trial in 0..trials {
                    records.push(suite.guide(&policy, trial)?.in_group(label.clone()));
                    for n in ["dgs", "no_l1"] {
                        records.push(suite.baseline(n, trial)?.record.in_group(label.clone()));
                    }
                }
            }
        }
        TaskKind::Gan => {
            let base = GanSuite::new(cfg)?;
            let (_, _, learner) = base.online(0, None)?;
            let actor = learner.actor;
            let gcfg = cfg.gan_config()?;
            let k = cfg.usize("gan.mixture_k")?;
            let std = cfg.f64("gan.mixture_std")?;
            let radii = cfg.f64_list("transfer.gan_radii")?;
            let n_arch = cfg.usize("transfer.architectures")?;
            let mut jobs: Vec<(String, GanSuite, Option<autoloss_core::gan::GanArch>, usize)> = Vec::new();
            match mode {
                TransferMode::Model => {
                    for i in 0..n_arch {
                        let arch = base.sampled_arch(i);
                        jobs.push((format!("arch{i}:{}", arch.tag()), base.clone(), Some(arch), i));
                    }
                }
                TransferMode::Data => {
                    for &r in &radii {
                        let suite = base.with_mixture(MixtureSpec::ring(k, r, std)?);
                        for trial in 0..trials {
                            jobs.push((format!("radius={r}"), suite.clone(), Some(gcfg.arch), trial));
                        }
                    }
                }
                TransferMode::Both => {
                    for i in 0..n_arch {
                        let r = radii[i % radii.len()];
                        let arch = base.sampled_arch(i);
                        let suite = base.with_mixture(MixtureSpec::ring(k, r, std)?);
                        jobs.push((format!("arch{i}:{}:radius={r}", arch.tag()), suite, Some(arch), i));
                    }
                }
            }
            for (label, suite, arch, trial) in jobs {
                records.push(suite.guide(&actor, trial, arch)?.in_group(label.clone()));
                records.push(suite.baseline("1:1", trial, arch)?.in_group(label));
            }
        }
        TaskKind::MultiTask => bail!("transfer is defined for supervised and GAN tasks"),
    }
    Ok(vec![write_records(out, cfg, "transfer", &records)?])
}

// ---------------------------------------------------------------- report

/// Mean and standard deviation of every numeric column, per table, group
/// and arm, over all result tables in `dir`.
pub fn summarize(dir: &Path) -> Result<Table> {
    let mut summary = Table::new(&["table", "group", "arm", "metric", "n", "mean", "std"]);
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .filter(|p| p.file_name().is_some_and(|n| n != SUMMARY_FILE))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    files.sort();
    for path in files {
        let table = Table::read(&path)?;
        let (Some(gi), Some(ai)) = (table.column("group"), table.column("arm")) else {
            continue;
        };
        let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let mut groups: BTreeMap<(String, String), Vec<&Vec<Cell>>> = BTreeMap::new();
        for row in &table.rows {
            let text = |c: &Cell| match c {
                Cell::Text(s) => s.clone(),
                Cell::Num(v) => crate::csvio::format_num(*v),
            };
            groups.entry((text(&row[gi]), text(&row[ai]))).or_default().push(row);
        }
        for ((group, arm), rows) in groups {
            for (ci, col) in table.columns.iter().enumerate() {
                if ci == gi || ci == ai || col == "trial" {
                    continue;
                }
                let vals: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| match r[ci] {
                        Cell::Num(v) if v.is_finite() => Some(v),
                        _ => None,
                    })
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                summary.push(vec![
                    name.clone().into(),
                    group.clone().into(),
                    arm.clone().into(),
                    col.clone().into(),
                    vals.len().into(),
                    autoloss_core::numkit::mean(&vals).into(),
                    autoloss_core::numkit::std_dev(&vals).into(),
                ]);
            }
        }
    }
    Ok(summary.label("table", "summary"))
}

pub fn report(out: &Output) -> Result<Vec<PathBuf>> {
    out.claim(&[SUMMARY_FILE.to_string()])?;
    let summary = summarize(&out.dir)?;
    let path = out.path(SUMMARY_FILE);
    summary.write(&path)?;
    Ok(vec![path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parses_log_grid() {
        let v = parse_lambda_sweep("0.01:10:4").unwrap();
        assert_eq!(v.len(), 4);
        assert!((v[1] - 0.1).abs() < 1e-12 && (v[2] - 1.0).abs() < 1e-12 && v[3] == 10.0);
        assert_eq!(parse_lambda_sweep("0.5:0.5:1").unwrap(), vec![0.5]);
        assert!(parse_lambda_sweep("1:2").is_err());
        assert!(parse_lambda_sweep("0:1:3").is_err());
    }

    #[test]
    fn empty_dir_gives_empty_summary() {
        let dir = std::env::temp_dir().join(format!("autoloss-empty-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let s = summarize(&dir).unwrap();
        assert!(s.rows.is_empty());
        assert_eq!(s.columns[0], "table");
    }
}
