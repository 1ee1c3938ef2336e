//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. Set
//! `AUTOLOSS_CRITERIA=1,7` to run a subset. The exactness and determinism
//! criteria (4, 5, 6, 12) fail the test; the experimental ones are reported.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use autoloss_core::controller::{Architecture, ControllerPolicy, Critic, PolicyGrad};
use autoloss_core::features::HistoryCache;
use autoloss_core::gan::{architecture_grid, latent_batch, GanModel, MixtureSpec};
use autoloss_core::multialt::{synth_multitask_data, MultiTaskModel, NUM_TASKS};
use autoloss_core::numkit::{self, Rng};
use autoloss_core::ppo::SegmentRewardState;
use autoloss_core::reinforce::{estimate_policy_gradient, BaselineState};
use autoloss_core::sched::{run_policy_episode, Action, ActionSpace, EpisodeMode, TaskProcess};
use autoloss_core::tasks::data::{synth_classification_data, synth_regression_data, ClassificationSpec};
use autoloss_core::tasks::models::{l1_loss, MlpModel, RegressionModel, SupervisedModel};
use autoloss_harness::commands::{self, Output};
use autoloss_harness::config::{ExperimentConfig, TaskKind};
use autoloss_harness::experiments::gan::GanSuite;
use autoloss_harness::experiments::multitask::MultiTaskSuite;
use autoloss_harness::experiments::supervised::{best_within_budget, BaselineOutcome, SupervisedSuite};
use autoloss_harness::experiments::{mean, RunRecord};

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        let line = format!("[{}] criterion {n:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((n, pass, detail));
    }
}

fn metric_mean(records: &[RunRecord], name: &str) -> f64 {
    mean(records.iter().map(|r| r.get(name)))
}

// ------------------------------------------------------------ supervised

struct RegressionRun {
    suite: SupervisedSuite,
    guided: f64,
    dgs: Vec<BaselineOutcome>,
}

fn guide_all(suite: &SupervisedSuite, policy: &ControllerPolicy, trials: usize) -> Result<Vec<RunRecord>> {
    (0..trials).map(|t| suite.guide(policy, t)).collect()
}

fn baseline_all(suite: &SupervisedSuite, name: &str, trials: usize) -> Result<Vec<BaselineOutcome>> {
    (0..trials).map(|t| suite.baseline(name, t)).collect()
}

fn records(outcomes: &[BaselineOutcome]) -> Vec<RunRecord> {
    outcomes.iter().map(|o| o.record.clone()).collect()
}

fn criterion_1(rep: &mut Report) -> Result<RegressionRun> {
    let cfg = ExperimentConfig::for_task(TaskKind::Regression);
    let trials = cfg.trials()?;
    let suite = SupervisedSuite::new(&cfg)?;
    let t0 = Instant::now();
    let (policy, log) = suite.train_controller()?;
    let guided = metric_mean(&guide_all(&suite, &policy, trials)?, "test_adjusted");
    let dgs = baseline_all(&suite, "dgs", trials)?;
    let dgs_mse = metric_mean(&records(&dgs), "test_adjusted");
    let no_l1 = metric_mean(&records(&baseline_all(&suite, "no_l1", trials)?), "test_adjusted");
    let pass = guided <= 0.12 && (0.06..=0.15).contains(&dgs_mse) && no_l1 >= 0.4 && guided <= dgs_mse + 0.01;
    rep.record(
        1,
        pass,
        format!(
            "regression adjusted MSE: autoloss {guided:.4} (<= 0.12), dgs {dgs_mse:.4} (in [0.06, 0.15]), \
             w/o L1 {no_l1:.4} (>= 0.4), autoloss <= dgs + 0.01 [{} controller episodes, {:.0}s]",
            log.episodes.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
    Ok(RegressionRun { suite, guided, dgs })
}

fn criterion_2_and_9(rep: &mut Report, run2: bool, run9: bool) -> Result<()> {
    let cfg = ExperimentConfig::for_task(TaskKind::Classification);
    let trials = cfg.trials()?;
    let suite = SupervisedSuite::new(&cfg)?;
    let t0 = Instant::now();
    let (policy, _) = suite.train_controller()?;
    if run2 {
        let guided = metric_mean(&guide_all(&suite, &policy, trials)?, "test_metric");
        let no_l1 = metric_mean(&records(&baseline_all(&suite, "no_l1", trials)?), "test_metric");
        let mut others = Vec::new();
        for name in ["s1", "s2", "s3", "dgs"] {
            others.push((name, metric_mean(&records(&baseline_all(&suite, name, trials)?), "test_metric")));
        }
        let best = others.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
        let pass = guided <= 0.10 && no_l1 >= 0.11 && guided <= best + 0.005;
        let listed: Vec<String> = others.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
        rep.record(
            2,
            pass,
            format!(
                "MLP test error: autoloss {guided:.4} (<= 0.10), w/o L1 {no_l1:.4} (>= 0.11), {} \
                 (autoloss <= best + 0.005) [{:.0}s]",
                listed.join(", "),
                t0.elapsed().as_secs_f64()
            ),
        );
    }
    if run9 {
        let seps = cfg.f64_list("transfer.class_seps")?;
        let mut pass = true;
        let mut parts = Vec::new();
        for (j, &sep) in seps.iter().enumerate().skip(1) {
            let target = suite.transferred_data(j, sep);
            let guided = metric_mean(&guide_all(&target, &policy, trials)?, "test_metric");
            let dgs = metric_mean(&records(&baseline_all(&target, "dgs", trials)?), "test_metric");
            let no_l1 = metric_mean(&records(&baseline_all(&target, "no_l1", trials)?), "test_metric");
            pass &= guided <= dgs + 0.01 && guided < no_l1;
            parts.push(format!(
                "dataset {} (sep {sep}): autoloss {guided:.4}, dgs {dgs:.4}, w/o L1 {no_l1:.4}",
                j + 1
            ));
        }
        rep.record(
            9,
            pass,
            format!("{} (autoloss <= dgs + 0.01 and < w/o L1 on each)", parts.join("; ")),
        );
    }
    Ok(())
}

fn criterion_3(rep: &mut Report, base: Option<&RegressionRun>) -> Result<()> {
    let cfg = ExperimentConfig::for_task(TaskKind::Regression);
    let trials = cfg.trials()?;
    let mut suite = SupervisedSuite::new(&cfg)?;
    let mut guided = Vec::new();
    let mut combined = Vec::new();
    for lambda in [0.01, 0.1, 1.0, 10.0] {
        suite.set_lambda(lambda);
        let g = match base {
            Some(run) if lambda == run.suite.lambda() => run.guided,
            _ => {
                let (policy, _) = suite.train_controller()?;
                metric_mean(&guide_all(&suite, &policy, trials)?, "test_adjusted")
            }
        };
        guided.push(g);
        combined.push(metric_mean(&records(&baseline_all(&suite, "combined", trials)?), "test_adjusted"));
    }
    let (gmin, gmax) = (guided.iter().cloned().fold(f64::INFINITY, f64::min), guided.iter().cloned().fold(0.0, f64::max));
    let spread = (gmax - gmin) / mean(guided.iter().copied());
    let (cmin, cmax) = (combined.iter().cloned().fold(f64::INFINITY, f64::min), combined.iter().cloned().fold(0.0, f64::max));
    let ratio = cmax / cmin;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    rep.record(
        3,
        spread <= 0.2 && ratio >= 2.0,
        format!(
            "lambda 0.01..10: guided [{}] spread {spread:.3} (<= 0.2); fixed combination [{}] worst/best {ratio:.2} (>= 2)",
            fmt(&guided),
            fmt(&combined)
        ),
    );
    Ok(())
}

fn criterion_11(rep: &mut Report, base: &RegressionRun) -> Result<()> {
    let totals: Vec<f64> = base
        .dgs
        .iter()
        .map(|o| o.search.as_ref().map_or(0.0, |s| s.total_batches() as f64))
        .collect();
    let budget = (0.4 * mean(totals.iter().copied())).round() as u64;
    let dgs_at_budget = mean(base.dgs.iter().map(|o| {
        let row = best_within_budget(o.search.as_ref().expect("dgs keeps its grid"), budget);
        row.map_or(f64::NAN, |r| autoloss_core::sched::metric(&r.metrics, "test_adjusted").unwrap_or(f64::NAN))
    }));
    let cfg = ExperimentConfig::for_task(TaskKind::Regression).with("budget.max_batches", budget)?;
    let mut suite = SupervisedSuite::new(&cfg)?;
    suite.set_budget(commands::controller_budget(&cfg)?);
    let (policy, log) = suite.train_controller()?;
    let guided = guide_all(&suite, &policy, cfg.trials()?)?;
    let worst_cost = guided
        .iter()
        .map(|r| r.get("batches") as u64 + log.batches_scanned)
        .max()
        .unwrap_or(0);
    let mse = metric_mean(&guided, "test_adjusted");
    rep.record(
        11,
        mse <= dgs_at_budget && worst_cost <= budget,
        format!(
            "budget {budget} batches (40% of dgs): autoloss {mse:.4} using at most {worst_cost} \
             ({} controller episodes), dgs best-so-far {dgs_at_budget:.4}",
            log.episodes.len()
        ),
    );
    Ok(())
}

// ------------------------------------------------------------ GAN

fn criterion_7_and_10(rep: &mut Report, run7: bool, run10: bool) -> Result<()> {
    let cfg = ExperimentConfig::for_task(TaskKind::Gan);
    let suite = GanSuite::new(&cfg)?;
    let t0 = Instant::now();
    let seeds = 6;
    let mut actor = None;
    if run7 {
        let mut ppo = Vec::new();
        let mut fixed: Vec<(String, Vec<f64>)> = suite.ratios().iter().map(|r| (r.clone(), Vec::new())).collect();
        for seed in 0..seeds {
            let (rec, _, learner) = suite.online(seed, None)?;
            if seed == 0 {
                actor = Some(learner.actor);
            }
            ppo.push(rec.get("inception_score"));
            for (label, scores) in fixed.iter_mut() {
                scores.push(suite.baseline(label, seed, None)?.get("inception_score"));
            }
        }
        let finite_mean = |v: &[f64]| mean(v.iter().map(|x| if x.is_finite() { *x } else { 1.0 }));
        let ppo_mean = finite_mean(&ppo);
        let best = fixed.iter().map(|(_, v)| finite_mean(v)).fold(f64::NEG_INFINITY, f64::max);
        let one_one = &fixed.iter().find(|(l, _)| l == "1:1").expect("1:1 is in the ratio list").1;
        let beats = ppo.iter().zip(one_one).filter(|(p, f)| p.is_finite() && (!f.is_finite() || p > f)).count();
        let listed: Vec<String> = fixed.iter().map(|(l, v)| format!("{l} {:.3}", finite_mean(v))).collect();
        rep.record(
            7,
            ppo_mean >= best - 0.1 && beats >= 4,
            format!(
                "GAN proxy IS over {seeds} seeds: ppo {ppo_mean:.3} vs best fixed {best:.3} (>= best - 0.1); \
                 beats 1:1 in {beats}/{seeds} (>= 4) [{}; {:.0}s]",
                listed.join(", "),
                t0.elapsed().as_secs_f64()
            ),
        );
    }
    if run10 {
        let actor = match actor {
            Some(a) => a,
            None => suite.online(0, None)?.2.actor,
        };
        let n = cfg.usize("transfer.architectures")?;
        let (mut wins, mut counted) = (0, 0);
        for i in 0..n {
            let arch = suite.sampled_arch(i);
            let guided = suite.guide(&actor, i, Some(arch))?.get("inception_score");
            let fixed = suite.baseline("1:1", i, Some(arch))?.get("inception_score");
            let failed = |v: f64| !v.is_finite() || v < suite.fail_threshold();
            if failed(guided) && failed(fixed) {
                continue;
            }
            counted += 1;
            if !failed(guided) && (failed(fixed) || guided > fixed) {
                wins += 1;
            }
        }
        let rate = wins as f64 / counted.max(1) as f64;
        rep.record(
            10,
            counted > 0 && rate >= 0.6,
            format!("{wins}/{counted} sampled architectures won by the frozen controller vs 1:1 ({rate:.2} >= 0.6; {} excluded)", n - counted),
        );
    }
    Ok(())
}

// ------------------------------------------------------------ multi-task

fn criterion_8(rep: &mut Report) -> Result<()> {
    let cfg = ExperimentConfig::for_task(TaskKind::MultiTask);
    let suite = MultiTaskSuite::new(&cfg)?;
    let seeds = 6;
    let (mut vs_fixed, mut vs_mt) = (0, 0);
    let (mut first, mut last) = (Vec::new(), Vec::new());
    let mut ours = Vec::new();
    for seed in 0..seeds {
        let (rec, _, _) = suite.online(seed)?;
        let v = rec.get("target_val_loss");
        if v <= suite.baseline("fixed_ratio", seed)?.get("target_val_loss") {
            vs_fixed += 1;
        }
        if v <= suite.baseline("mt_only", seed)?.get("target_val_loss") {
            vs_mt += 1;
        }
        first.push(rec.get("target_share_first"));
        last.push(rec.get("target_share_last"));
        ours.push(v);
    }
    let (f, l) = (mean(first), mean(last));
    rep.record(
        8,
        vs_fixed >= 4 && vs_mt >= 5 && l > f,
        format!(
            "multi-task target val loss {:.4}: <= fixed ratio in {vs_fixed}/{seeds} (>= 4), <= target-only in \
             {vs_mt}/{seeds} (>= 5); target share first third {f:.3}, last third {l:.3}",
            mean(ours)
        ),
    );
    Ok(())
}

// ------------------------------------------------------------ exactness

/// Two decisions over two actions; the state one-hot encodes (step, previous
/// action) so a linear controller is tabular.
struct TwoStep {
    actions: ActionSpace,
    cache: HistoryCache,
    taken: Vec<usize>,
}

const REWARDS: [[f64; 2]; 2] = [[1.0, 3.0], [0.0, 2.5]];

fn two_step_state(taken: &[usize]) -> Vec<f64> {
    let mut x = vec![0.0; 3];
    match taken {
        [] => x[0] = 1.0,
        [a, ..] => x[1 + a] = 1.0,
    }
    x
}

impl TaskProcess for TwoStep {
    fn action_space(&self) -> &ActionSpace {
        &self.actions
    }
    fn feature_dim(&self) -> usize {
        3
    }
    fn features(&self) -> Vec<f64> {
        two_step_state(&self.taken)
    }
    fn cache(&self) -> &HistoryCache {
        &self.cache
    }
    fn apply_action(&mut self, a: usize) -> autoloss_core::Result<()> {
        self.taken.push(a);
        Ok(())
    }
    fn step_count(&self) -> usize {
        self.taken.len()
    }
    fn converged(&self) -> bool {
        self.taken.len() >= 2
    }
    fn episode_mode(&self) -> EpisodeMode {
        EpisodeMode::UntilConvergence { max_steps: 2 }
    }
    fn reward(&mut self) -> f64 {
        REWARDS[self.taken[0]][self.taken[1]]
    }
    fn performance(&mut self) -> f64 {
        self.reward()
    }
    fn batches_scanned(&self) -> u64 {
        self.taken.len() as u64
    }
    fn final_metrics(&mut self) -> Vec<(String, f64)> {
        vec![]
    }
}

fn criterion_4(rep: &mut Report) -> Result<()> {
    let t0 = Instant::now();
    let mut policy = ControllerPolicy::new(Architecture::Linear, 3, 2, &mut Rng::new(11));
    for (i, p) in policy.net_mut().params_mut().iter_mut().enumerate() {
        *p = 0.3 * ((i as f64) * 1.7).sin();
    }
    let mut exact = PolicyGrad::zeros(policy.num_params());
    for a0 in 0..2 {
        for a1 in 0..2 {
            let (x0, x1) = (two_step_state(&[]), two_step_state(&[a0]));
            let p = (policy.log_prob(&x0, a0)? + policy.log_prob(&x1, a1)?).exp();
            let mut score = policy.grad_log_prob(&x0, a0)?;
            score.add_scaled(&policy.grad_log_prob(&x1, a1)?, 1.0);
            exact.add_scaled(&score, p * REWARDS[a0][a1]);
        }
    }
    let rng = Rng::new(2024);
    let traces = (0..100_000u64)
        .map(|i| {
            let mut task = TwoStep {
                actions: ActionSpace::new(vec![Action::new(0, 0), Action::new(1, 0)])?,
                cache: HistoryCache::new(2, 0),
                taken: Vec::new(),
            };
            run_policy_episode(&mut task, &policy, 2, &mut rng.split_indexed("ep", i))
        })
        .collect::<autoloss_core::Result<Vec<_>>>()?;
    let mut baseline = BaselineState::new(0.9)?;
    baseline.update(0.0)?;
    let mc = estimate_policy_gradient(&traces, &baseline, f64::INFINITY, &policy)?;
    let worst = exact
        .as_slice()
        .iter()
        .zip(mc.as_slice())
        .filter(|(e, _)| e.abs() > 1e-3)
        .map(|(e, m)| (m - e).abs() / e.abs())
        .fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    rep.record(
        4,
        worst <= 0.05 && secs < 60.0,
        format!("Monte-Carlo policy gradient over 1e5 episodes: worst relative error {worst:.4} (<= 0.05) in {secs:.1}s (< 60)"),
    );
    Ok(())
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let d = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / numkit::l2_norm(a).max(numkit::l2_norm(n)).max(1e-10)
}

fn central_diff(params: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn jitter(params: &mut [f64], rng: &mut Rng) {
    params.iter_mut().for_each(|p| *p += rng.uniform(-0.05, 0.05));
}

fn criterion_5(rep: &mut Report) -> Result<()> {
    const N: u64 = 20;
    let mut worst: Vec<(&str, f64, f64)> = Vec::new();
    let mut track = |name: &'static str, tol: f64, e: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e, tol)),
    };
    for seed in 0..N {
        let mut rng = Rng::new(seed);
        for (name, arch) in [("controller linear", Architecture::Linear), ("controller mlp", Architecture::Mlp2 { hidden: 8 })] {
            let mut policy = ControllerPolicy::new(arch, 5, 3, &mut rng);
            jitter(policy.net_mut().params_mut(), &mut rng);
            let x = rng.gauss_vec(5, 0.0, 1.0);
            let y = rng.below(3);
            let analytic = policy.grad_log_prob(&x, y)?;
            let mut p = policy.net().params().to_vec();
            let numeric = central_diff(&mut p, 1e-6, |q| {
                policy.net_mut().params_mut().copy_from_slice(q);
                policy.log_prob(&x, y).unwrap()
            });
            track(name, 1e-5, rel_err(analytic.as_slice(), &numeric));
        }
        let critic = Critic::new(Architecture::Mlp2 { hidden: 8 }, 4, &mut rng);
        let x = rng.gauss_vec(4, 0.0, 1.0);
        let target = rng.gauss(0.0, 2.0);
        let (_, analytic) = critic.grad_squared_error(&x, target)?;
        let mut p = critic.net().params().to_vec();
        let numeric = central_diff(&mut p, 1e-6, |q| {
            let mut net = critic.net().clone();
            net.params_mut().copy_from_slice(q);
            Critic::from_net(net).unwrap().grad_squared_error(&x, target).unwrap().0
        });
        track("critic", 1e-5, rel_err(&analytic, &numeric));

        let data = synth_regression_data(4, 40, 2.0, &mut rng)?;
        let mut model = RegressionModel::init(4, 0.1, &mut rng);
        let idx: Vec<usize> = (0..16).map(|_| rng.below(40)).collect();
        let mut analytic = vec![0.0; model.num_params()];
        model.task_loss(&data, &idx, Some(&mut analytic));
        let mut p = model.params().to_vec();
        let numeric = central_diff(&mut p, 1e-5, |q| {
            model.params_mut().copy_from_slice(q);
            model.task_loss(&data, &idx, None)
        });
        track("regression MSE", 1e-5, rel_err(&analytic, &numeric));

        let mut w: Vec<f64> = (0..10)
            .map(|_| rng.uniform(0.01, 1.0) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 })
            .collect();
        let mut analytic = vec![0.0; w.len()];
        l1_loss(&w, Some(&mut analytic));
        let numeric = central_diff(&mut w, 1e-6, |q| l1_loss(q, None));
        track("L1", 1e-5, rel_err(&analytic, &numeric));

        let spec = ClassificationSpec {
            d: 40,
            p: 60,
            ..ClassificationSpec::default()
        };
        let data = synth_classification_data(spec, &mut rng)?;
        let mut mlp = MlpModel::new(40, 6, 5, &mut rng);
        jitter(mlp.params_mut(), &mut rng);
        let idx: Vec<usize> = (0..12).map(|_| rng.below(60)).collect();
        let mut analytic = vec![0.0; mlp.num_params()];
        mlp.task_loss(&data, &idx, Some(&mut analytic));
        let mut p = mlp.params().to_vec();
        let numeric = central_diff(&mut p, 1e-6, |q| {
            mlp.params_mut().copy_from_slice(q);
            mlp.task_loss(&data, &idx, None)
        });
        track("MLP BCE", 1e-5, rel_err(&analytic, &numeric));

        let grid = architecture_grid();
        let mut arch = grid[seed as usize % grid.len()];
        arch.width = 6;
        let mut gan = GanModel::new(arch, &mut rng);
        gan.non_saturating = seed % 2 == 1;
        jitter(gan.generator.params_mut(), &mut rng);
        jitter(gan.discriminator.params_mut(), &mut rng);
        let real = MixtureSpec::standard().sample_n(10, &mut rng);
        let z = latent_batch(arch.dz, 10, &mut rng);
        let mut analytic = vec![0.0; gan.generator.num_params()];
        gan.generator_loss(&z, Some(&mut analytic));
        let mut p = gan.generator.params().to_vec();
        let numeric = central_diff(&mut p, 1e-6, |q| {
            gan.generator.params_mut().copy_from_slice(q);
            gan.generator_loss(&z, None).loss
        });
        track("GAN generator", 1e-4, rel_err(&analytic, &numeric));
        let mut analytic = vec![0.0; gan.discriminator.num_params()];
        gan.discriminator_loss(&real, &z, Some(&mut analytic));
        let mut p = gan.discriminator.params().to_vec();
        let numeric = central_diff(&mut p, 1e-6, |q| {
            gan.discriminator.params_mut().copy_from_slice(q);
            gan.discriminator_loss(&real, &z, None).loss
        });
        track("GAN discriminator", 1e-4, rel_err(&analytic, &numeric));

        let data = synth_multitask_data(5, 2, [20, 20, 20], 1.0, 0.2, &mut rng)?;
        let mut mt = MultiTaskModel::new(5, 2, &mut rng);
        let m = seed as usize % NUM_TASKS;
        let idx = data.tasks[m].train.clone();
        let mut analytic = vec![0.0; mt.params().len()];
        mt.task_loss(m, &data.tasks[m], &idx, Some(&mut analytic));
        let mut p = mt.params().to_vec();
        let numeric = central_diff(&mut p, 1e-5, |q| {
            mt.params_mut().copy_from_slice(q);
            mt.task_loss(m, &data.tasks[m], &idx, None)
        });
        track("multi-task", 1e-5, rel_err(&analytic, &numeric));
    }
    let pass = worst.iter().all(|(_, e, tol)| e <= tol);
    let listed: Vec<String> = worst.iter().map(|(n, e, tol)| format!("{n} {e:.1e}/{tol:.0e}")).collect();
    rep.record(5, pass, format!("finite-difference gradients, {N} instances each, worst/tolerance: {}", listed.join(", ")));
    Ok(())
}

fn criterion_6(rep: &mut Report) -> Result<()> {
    let eta: f64 = 0.9;
    let rewards = Rng::new(1).gauss_vec(200, 1.0, 3.0);
    let mut b = BaselineState::new(eta)?;
    b.update(rewards[0])?;
    let mut worst: f64 = 0.0;
    for h in 1..rewards.len() {
        b.update(rewards[h])?;
        let closed: f64 = eta.powi(h as i32) * rewards[0]
            + (1..=h).map(|i| (1.0 - eta) * eta.powi((h - i) as i32) * rewards[i]).sum::<f64>();
        worst = worst.max((b.value() - closed).abs());
    }
    let mut cases = Vec::new();
    let mut s = SegmentRewardState::new(1, 1.0, 1e-6)?;
    cases.push((s.push(1.0), None));
    cases.push((s.push(2.0), None));
    cases.push((s.push(3.0), Some(1.0)));
    cases.push((s.push(3.0), Some(0.0)));
    let mut s = SegmentRewardState::new(3, 2.0, 1e-6)?;
    for p in [1.0, 2.0, 4.0, 7.0] {
        cases.push((s.push(p), None));
    }
    cases.push((s.push(13.0), Some(6.0)));
    cases.push((s.push(14.0), Some(2.0 / (11.0 / 3.0))));
    let mut s = SegmentRewardState::new(1, 1.0, 1e-6)?;
    s.push(10.0);
    s.push(8.0);
    cases.push((s.push(7.0), Some(0.5)));
    let mut s = SegmentRewardState::new(1, 1.0, 1e-6)?;
    s.push(10.0);
    s.push(8.0);
    cases.push((s.push(9.0), Some(-0.5)));
    let exact = cases.iter().filter(|(got, want)| got == want).count();
    rep.record(
        6,
        worst <= 1e-12 && exact == cases.len(),
        format!(
            "EMA closed form max error {worst:.1e} (<= 1e-12); segment-reward hand cases exact {exact}/{}",
            cases.len()
        ),
    );
    Ok(())
}

// ------------------------------------------------------------ determinism

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.push((p.file_name().unwrap().to_string_lossy().to_string(), fs::read(&p)?));
        }
    }
    out.sort();
    Ok(out)
}

fn criterion_12(rep: &mut Report) -> Result<()> {
    let root = std::env::temp_dir().join(format!("autoloss-determinism-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    let configs = [
        ExperimentConfig::for_task(TaskKind::Regression)
            .with("task.samples", 2000)?
            .with("task.max_steps", 1500)?
            .with("trainer.max_episodes", 6)?
            .with("experiment.trials", 2)?
            .with("baselines.dgs_size", 4)?
            .with("experiment.seed", 7)?,
        ExperimentConfig::for_task(TaskKind::Gan)
            .with("gan.total_steps", 1000)?
            .with("gan.segment", 50)?
            .with("experiment.trials", 2)?,
        ExperimentConfig::for_task(TaskKind::MultiTask)
            .with("multitask.total_steps", 1000)?
            .with("experiment.trials", 2)?,
    ];
    let mut identical = true;
    let mut compared = 0;
    for cfg in &configs {
        let mut runs = Vec::new();
        for rerun in 0..2 {
            let out = Output::new(root.join(format!("{}-{rerun}", cfg.kind().tag())), false);
            commands::train_controller(cfg, &out)?;
            commands::guide(cfg, &out, None)?;
            commands::baseline(cfg, &out, "all", None)?;
            runs.push(csv_files(&out.dir)?);
        }
        compared += runs[0].len();
        identical &= runs[0] == runs[1] && !runs[0].is_empty();
    }
    let _ = fs::remove_dir_all(&root);
    rep.record(
        12,
        identical,
        format!("{compared} CSVs from reruns of the same config hash and seed are byte-identical: {identical}"),
    );
    Ok(())
}

fn main() -> Result<()> {
    let selected: BTreeSet<usize> = match std::env::var("AUTOLOSS_CRITERIA") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        _ => (1..=12).collect(),
    };
    let on = |n: usize| selected.contains(&n);
    let mut rep = Report { lines: Vec::new() };
    let started = Instant::now();
    if on(4) {
        criterion_4(&mut rep)?;
    }
    if on(5) {
        criterion_5(&mut rep)?;
    }
    if on(6) {
        criterion_6(&mut rep)?;
    }
    if on(12) {
        criterion_12(&mut rep)?;
    }
    if on(1) || on(3) || on(11) {
        let base = if on(1) || on(11) { Some(criterion_1(&mut rep)?) } else { None };
        if on(3) {
            criterion_3(&mut rep, base.as_ref())?;
        }
        if let (true, Some(base)) = (on(11), base.as_ref()) {
            criterion_11(&mut rep, base)?;
        }
    }
    if on(2) || on(9) {
        criterion_2_and_9(&mut rep, on(2), on(9))?;
    }
    if on(7) || on(10) {
        criterion_7_and_10(&mut rep, on(7), on(10))?;
    }
    if on(8) {
        criterion_8(&mut rep)?;
    }
    rep.lines.sort_by_key(|l| l.0);
    println!("\nacceptance summary ({:.0}s):", started.elapsed().as_secs_f64());
    for (n, pass, _) in &rep.lines {
        println!("  criterion {n:>2}: {}", if *pass { "PASS" } else { "FAIL" });
    }
    let hard_failures: Vec<usize> = rep
        .lines
        .iter()
        .filter(|(n, pass, _)| !pass && [4, 5, 6, 12].contains(n))
        .map(|l| l.0)
        .collect();
    if !hard_failures.is_empty() {
        anyhow::bail!("exactness or determinism criteria failed: {hard_failures:?}");
    }
    Ok(())
}
