//! Analytic gradients against central finite differences.

use autoloss_core::controller::{Architecture, ControllerPolicy, Critic};
use autoloss_core::gan::{architecture_grid, latent_batch, GanModel, MixtureSpec};
use autoloss_core::multialt::{synth_multitask_data, MultiTaskModel, NUM_TASKS};
use autoloss_core::numkit::Rng;
use autoloss_core::tasks::data::{synth_classification_data, synth_regression_data, ClassificationSpec};
use autoloss_core::tasks::models::{l1_loss, MlpModel, RegressionModel, SupervisedModel};

const INSTANCES: u64 = 20;

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`, the usual gradient-check ratio.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-10)
}

/// Zero-initialized biases can sit exactly on a ReLU hinge, where central
/// differences average two one-sided slopes. Jitter to a generic point.
fn jitter(params: &mut [f64], rng: &mut Rng) {
    params.iter_mut().for_each(|p| *p += rng.uniform(-0.05, 0.05));
}

fn central_diff(params: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

#[test]
fn controller_log_prob_matches_finite_differences() {
    for arch in [Architecture::Linear, Architecture::Mlp2 { hidden: 8 }] {
        for seed in 0..INSTANCES {
            let mut rng = Rng::new(seed);
            let mut policy = ControllerPolicy::new(arch, 5, 3, &mut rng);
            jitter(policy.net_mut().params_mut(), &mut rng);
            let x = rng.gauss_vec(5, 0.0, 1.0);
            let y = rng.below(3);
            let analytic = policy.grad_log_prob(&x, y).unwrap();
            let mut params = policy.net().params().to_vec();
            let numeric = central_diff(&mut params, 1e-6, |p| {
                policy.net_mut().params_mut().copy_from_slice(p);
                policy.log_prob(&x, y).unwrap()
            });
            let e = rel_err(analytic.as_slice(), &numeric);
            assert!(e < 1e-5, "{arch:?} seed {seed}: {e}");
        }
    }
}

#[test]
fn critic_squared_error_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(100 + seed);
        let critic = Critic::new(Architecture::Mlp2 { hidden: 8 }, 4, &mut rng);
        let x = rng.gauss_vec(4, 0.0, 1.0);
        let target = rng.gauss(0.0, 2.0);
        let (_, analytic) = critic.grad_squared_error(&x, target).unwrap();
        let mut params = critic.net().params().to_vec();
        let numeric = central_diff(&mut params, 1e-6, |p| {
            rebuild_critic(&critic, p).grad_squared_error(&x, target).unwrap().0
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}

fn rebuild_critic(template: &Critic, params: &[f64]) -> Critic {
    let mut net = template.net().clone();
    net.params_mut().copy_from_slice(params);
    Critic::from_net(net).unwrap()
}

#[test]
fn regression_mse_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(200 + seed);
        let data = synth_regression_data(4, 40, 2.0, &mut rng).unwrap();
        let mut model = RegressionModel::init(4, 0.1, &mut rng);
        let idx: Vec<usize> = (0..16).map(|_| rng.below(40)).collect();
        let mut analytic = vec![0.0; model.num_params()];
        model.task_loss(&data, &idx, Some(&mut analytic));
        let mut params = model.params().to_vec();
        let numeric = central_diff(&mut params, 1e-5, |p| {
            model.params_mut().copy_from_slice(p);
            model.task_loss(&data, &idx, None)
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}

#[test]
fn l1_matches_finite_differences_away_from_zero() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(300 + seed);
        let mut params: Vec<f64> = (0..10)
            .map(|_| {
                let v = rng.uniform(0.01, 1.0);
                if rng.bernoulli(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let mut analytic = vec![0.0; params.len()];
        l1_loss(&params, Some(&mut analytic));
        let numeric = central_diff(&mut params, 1e-6, |p| l1_loss(p, None));
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}

#[test]
fn mlp_bce_matches_finite_differences() {
    let spec = ClassificationSpec {
        d: 40,
        p: 60,
        ..ClassificationSpec::default()
    };
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(400 + seed);
        let data = synth_classification_data(spec, &mut rng).unwrap();
        let mut model = MlpModel::new(40, 6, 5, &mut rng);
        jitter(model.params_mut(), &mut rng);
        let idx: Vec<usize> = (0..12).map(|_| rng.below(60)).collect();
        let mut analytic = vec![0.0; model.num_params()];
        model.task_loss(&data, &idx, Some(&mut analytic));
        let mut params = model.params().to_vec();
        let numeric = central_diff(&mut params, 1e-6, |p| {
            model.params_mut().copy_from_slice(p);
            model.task_loss(&data, &idx, None)
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}

fn small_gan(seed: u64) -> (GanModel, autoloss_core::numkit::Mat, autoloss_core::numkit::Mat) {
    let mut rng = Rng::new(500 + seed);
    let grid = architecture_grid();
    let mut arch = grid[seed as usize % grid.len()];
    // Narrow nets keep the finite-difference sweep fast; the layer code is width-agnostic.
    arch.width = 6;
    let mut model = GanModel::new(arch, &mut rng);
    model.non_saturating = seed % 2 == 1;
    jitter(model.generator.params_mut(), &mut rng);
    jitter(model.discriminator.params_mut(), &mut rng);
    let real = MixtureSpec::standard().sample_n(10, &mut rng);
    let z = latent_batch(arch.dz, 10, &mut rng);
    (model, real, z)
}

#[test]
fn generator_loss_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let (mut model, _, z) = small_gan(seed);
        let mut analytic = vec![0.0; model.generator.num_params()];
        model.generator_loss(&z, Some(&mut analytic));
        let mut params = model.generator.params().to_vec();
        let numeric = central_diff(&mut params, 1e-6, |p| {
            model.generator.params_mut().copy_from_slice(p);
            model.generator_loss(&z, None).loss
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-4, "seed {seed} {}: {e}", model.arch.tag());
    }
}

#[test]
fn discriminator_loss_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let (mut model, real, z) = small_gan(seed);
        let mut analytic = vec![0.0; model.discriminator.num_params()];
        model.discriminator_loss(&real, &z, Some(&mut analytic));
        let mut params = model.discriminator.params().to_vec();
        let numeric = central_diff(&mut params, 1e-6, |p| {
            model.discriminator.params_mut().copy_from_slice(p);
            model.discriminator_loss(&real, &z, None).loss
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-4, "seed {seed} {}: {e}", model.arch.tag());
    }
}

#[test]
fn multitask_losses_match_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(600 + seed);
        let data = synth_multitask_data(5, 2, [20, 20, 20], 1.0, 0.2, &mut rng).unwrap();
        let mut model = MultiTaskModel::new(5, 2, &mut rng);
        let m = seed as usize % NUM_TASKS;
        let idx = data.tasks[m].train.clone();
        let mut analytic = vec![0.0; model.params().len()];
        model.task_loss(m, &data.tasks[m], &idx, Some(&mut analytic));
        let mut params = model.params().to_vec();
        let numeric = central_diff(&mut params, 1e-5, |p| {
            model.params_mut().copy_from_slice(p);
            model.task_loss(m, &data.tasks[m], &idx, None)
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-5, "seed {seed} task {m}: {e}");
    }
}

