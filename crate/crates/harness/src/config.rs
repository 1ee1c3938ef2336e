//! Flat `dotted.key = value` experiment configuration.
//!
//! Every key has a default; a config file overrides a subset. The full
//! resolved key set is echoed next to every output and hashed so a result row
//! can be tied to the exact configuration that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use autoloss_core::baselines::{GridScale, GridSearchSpec};
use autoloss_core::controller::{Architecture, DEFAULT_HIDDEN};
use autoloss_core::features::{FeatureBlock, FeatureSpec};
use autoloss_core::gan::{Activation, GanArch, GanConfig, MixtureSpec};
use autoloss_core::multialt::{MultiTaskConfig, NUM_TASKS};
use autoloss_core::ppo::PpoConfig;
use autoloss_core::reinforce::ReinforceConfig;
use autoloss_core::tasks::data::ClassificationSpec;
use autoloss_core::tasks::supervised::{Objective, RewardForm, SupervisedConfig, TaskOptimizer};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: cannot parse {value:?} as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
    Gan,
    MultiTask,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regression" => Some(TaskKind::Regression),
            "classification" => Some(TaskKind::Classification),
            "gan" => Some(TaskKind::Gan),
            "multitask" => Some(TaskKind::MultiTask),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TaskKind::Regression => "regression",
            TaskKind::Classification => "classification",
            TaskKind::Gan => "gan",
            TaskKind::MultiTask => "multitask",
        }
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self, TaskKind::Regression | TaskKind::Classification)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Defaults for every key. Task-dependent ones are filled from `kind`.
fn defaults(kind: TaskKind) -> BTreeMap<String, String> {
    let sup = match kind {
        TaskKind::Classification => SupervisedConfig::classification_default(),
        _ => SupervisedConfig::regression_default(),
    };
    let cls = ClassificationSpec::default();
    let gan = GanConfig::default();
    let mt = MultiTaskConfig::default();
    let ppo = PpoConfig::default();
    let rf = ReinforceConfig::default();
    let dgs = GridSearchSpec::default();
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("task.kind", kind.tag().into());
    put("task.d", if kind == TaskKind::Classification { cls.d } else { 32 }.to_string());
    put("task.samples", cls.p.to_string());
    put("task.noise_std", "2".into());
    put("task.class_sep", cls.class_sep.to_string());
    put("task.informative_frac", cls.informative_frac.to_string());
    put("task.redundant_frac", cls.redundant_frac.to_string());
    put("task.hidden", "32,32".into());
    put("task.init_scale", "0.001".into());
    put("task.lr", sup.lr.to_string());
    put("task.optimizer", "adam".into());
    put("task.batch_size", sup.batch_size.to_string());
    put("task.lambda", sup.l1_weight.to_string());
    put("task.max_steps", sup.max_steps.to_string());
    put("task.val_every", sup.val_every.to_string());
    put("task.patience", sup.patience.to_string());
    put("task.tol", sup.tol.to_string());
    put("task.reward_scale", sup.reward_scale.to_string());
    put(
        "task.reward_form",
        match sup.reward_form {
            RewardForm::Inverse => "inverse",
            RewardForm::InverseMinusOne => "inverse_minus_one",
        }
        .into(),
    );
    put("task.keep_best", sup.keep_best.to_string());
    put("split.fractions", "0.35,0.15,0.25,0.1,0.15".into());
    put("features.ablate", "none".into());
    put("controller.arch", "mlp2".into());
    put("controller.hidden", DEFAULT_HIDDEN.to_string());
    put("controller.guidance", "sample".into());
    put(
        "trainer.kind",
        if kind.is_supervised() { "reinforce" } else { "ppo" }.into(),
    );
    put("trainer.lr", rf.learning_rate.to_string());
    // Regression controllers start on a flat stretch of the reward (the
    // task model does not train at a 50% L1 share) and need longer to leave it.
    let regression = kind == TaskKind::Regression;
    put("trainer.max_episodes", if regression { 500 } else { rf.max_episodes }.to_string());
    put("trainer.sequences", rf.sequences_per_update.to_string());
    put("trainer.clip", rf.clip.to_string());
    put("trainer.baseline_decay", rf.baseline_decay.to_string());
    put("trainer.window", if regression { 100 } else { rf.window }.to_string());
    put("trainer.plateau_tol", rf.plateau_tol.to_string());
    put("ppo.gamma", ppo.gamma.to_string());
    put("ppo.clip", ppo.clip.to_string());
    put("ppo.capacity", ppo.capacity.to_string());
    put("ppo.minibatch", ppo.minibatch.to_string());
    put("ppo.sync_every", ppo.sync_every.to_string());
    put("ppo.lr", ppo.learning_rate.to_string());
    put("ppo.updates_per_segment", ppo.updates_per_segment.to_string());
    put("ppo.reward_clip", ppo.reward_clip.to_string());
    put("ppo.lookback", ppo.lookback.to_string());
    put("ppo.reward_scale", ppo.reward_scale.to_string());
    put("ppo.denom_floor", ppo.denom_floor.to_string());
    put("gan.width", gan.arch.width.to_string());
    put("gan.dz", gan.arch.dz.to_string());
    put("gan.activation", gan.arch.activation.tag());
    put("gan.norm", gan.arch.norm.to_string());
    put("gan.lr", gan.lr.to_string());
    put("gan.beta1", gan.beta1.to_string());
    put("gan.batch_size", gan.batch_size.to_string());
    put("gan.train_size", gan.train_size.to_string());
    put("gan.segment", gan.segment_len.to_string());
    put("gan.total_steps", gan.total_steps.to_string());
    put("gan.eval_samples", gan.eval_samples.to_string());
    put("gan.feature_every", gan.feature_every.to_string());
    put("gan.feature_samples", gan.feature_samples.to_string());
    put("gan.non_saturating", gan.non_saturating.to_string());
    put("gan.reward_scale", gan.reward_scale.to_string());
    put("gan.mixture_k", "8".into());
    put("gan.mixture_radius", "2".into());
    put("gan.mixture_std", "0.05".into());
    put("gan.fail_threshold", "2".into());
    put("multitask.d", mt.d.to_string());
    put("multitask.latent", mt.latent.to_string());
    put("multitask.sizes", join(&mt.sizes));
    put("multitask.noise_std", mt.noise_std.to_string());
    put("multitask.val_frac", mt.val_frac.to_string());
    put("multitask.lrs", join(&mt.learning_rates));
    put("multitask.batch_size", mt.batch_size.to_string());
    put("multitask.segment", mt.segment_len.to_string());
    put("multitask.total_steps", mt.total_steps.to_string());
    put("multitask.val_every", mt.val_every.to_string());
    put("baselines.dgs_lo", dgs.lo.to_string());
    put("baselines.dgs_hi", dgs.hi.to_string());
    put("baselines.dgs_size", dgs.size.to_string());
    put("baselines.th_lo", "0.001".into());
    put("baselines.th_hi", "10".into());
    put("baselines.th_size", "10".into());
    put("baselines.finetune_switch", "0.7".into());
    put("baselines.gan_ratios", "1:1,1:3,1:5,3:1,5:1".into());
    put("experiment.trials", "10".into());
    put("experiment.seed", "0".into());
    put("budget.max_batches", "0".into());
    put("transfer.class_seps", "1,0.9,1.1".into());
    put("transfer.architectures", "20".into());
    put("transfer.hidden", "16x16,64x64".into());
    put("transfer.gan_radii", "1.5,2.5".into());
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// All defaults for a task kind.
    pub fn for_task(kind: TaskKind) -> Self {
        ExperimentConfig {
            values: defaults(kind),
        }
    }

    /// Parse `key = value` lines; `#` starts a comment. `task.kind` picks the
    /// default set, so it is read first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind = match pairs.iter().rev().find(|(k, _)| k == "task.kind") {
            Some((_, v)) => TaskKind::parse(v).ok_or_else(|| ConfigError::BadValue {
                key: "task.kind".into(),
                value: v.clone(),
                expected: "regression | classification | gan | multitask",
            })?,
            None => TaskKind::Regression,
        };
        let mut cfg = Self::for_task(kind);
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    /// Builder-style override, for programmatic configs.
    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no default for {key}"))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, expected: &'static str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: v.into(),
            expected,
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.typed(key, "a number")
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.typed(key, "a nonnegative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.typed(key, "a nonnegative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.typed(key, "true | false")
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: self.get(key).into(),
                    expected: "a comma-separated list of numbers",
                })
            })
            .collect()
    }

    fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        Ok(self.f64_list(key)?.into_iter().map(|v| v as usize).collect())
    }

    pub fn kind(&self) -> TaskKind {
        TaskKind::parse(self.get("task.kind")).expect("validated on construction")
    }

    /// Every resolved key, sorted, one `key = value` per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the echo, hex; the first 16 characters identify a run.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("experiment.seed")
    }

    pub fn trials(&self) -> Result<usize> {
        self.usize("experiment.trials")
    }

    pub fn split_fractions(&self) -> Result<[f64; 5]> {
        let v = self.f64_list("split.fractions")?;
        v.try_into()
            .map_err(|_| ConfigError::Invalid("split.fractions needs exactly five entries".into()))
    }

    pub fn budget(&self) -> Result<Option<u64>> {
        Ok(Some(self.u64("budget.max_batches")?).filter(|b| *b > 0))
    }

    pub fn validate(&self) -> Result<()> {
        let fr = self.split_fractions()?;
        if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!("split fractions {fr:?} must be positive and sum to 1")));
        }
        let kind = self.kind();
        if kind == TaskKind::Classification && self.usize("task.d")? < 40 {
            return Err(ConfigError::Invalid(
                "classification needs task.d >= 40 so the informative block has at least 2 dims".into(),
            ));
        }
        match (kind.is_supervised(), self.get("trainer.kind")) {
            (true, "reinforce") | (false, "ppo") => {}
            (_, other) => {
                return Err(ConfigError::Invalid(format!(
                    "trainer.kind {other:?} does not fit task {}",
                    kind.tag()
                )))
            }
        }
        self.controller_arch()?;
        self.feature_spec(2)?;
        if kind.is_supervised() {
            self.supervised_config()?;
            self.reinforce_config()?;
        } else {
            self.ppo_config()?
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        match kind {
            TaskKind::Gan => {
                self.gan_config()?;
                self.mixture()?;
            }
            TaskKind::MultiTask => {
                self.multitask_config()?;
            }
            _ => {}
        }
        self.dgs_spec()?.points().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.threshold_grid()?;
        self.transfer_hidden()?;
        self.f64_list("transfer.class_seps")?;
        self.f64_list("transfer.gan_radii")?;
        Ok(())
    }

    pub fn controller_arch(&self) -> Result<Architecture> {
        match self.get("controller.arch") {
            "linear" => Ok(Architecture::Linear),
            "mlp2" => Ok(Architecture::Mlp2 {
                hidden: self.usize("controller.hidden")?,
            }),
            other => Err(ConfigError::BadValue {
                key: "controller.arch".into(),
                value: other.into(),
                expected: "linear | mlp2",
            }),
        }
    }

    pub fn ablated(&self) -> Result<Option<FeatureBlock>> {
        match self.get("features.ablate") {
            "none" | "" => Ok(None),
            name => FeatureBlock::parse(name).map(Some).ok_or_else(|| ConfigError::BadValue {
                key: "features.ablate".into(),
                value: name.into(),
                expected: "none | progress | grad_norms | loss_values | validation",
            }),
        }
    }

    pub fn feature_spec(&self, num_losses: usize) -> Result<FeatureSpec> {
        Ok(match self.ablated()? {
            None => FeatureSpec::full(num_losses),
            Some(block) => FeatureSpec::without(num_losses, block),
        })
    }

    pub fn classification_spec(&self) -> Result<ClassificationSpec> {
        Ok(ClassificationSpec {
            d: self.usize("task.d")?,
            p: self.usize("task.samples")?,
            class_sep: self.f64("task.class_sep")?,
            informative_frac: self.f64("task.informative_frac")?,
            redundant_frac: self.f64("task.redundant_frac")?,
        })
    }

    pub fn mlp_hidden(&self) -> Result<(usize, usize)> {
        match self.usize_list("task.hidden")?[..] {
            [a, b] if a > 0 && b > 0 => Ok((a, b)),
            _ => Err(ConfigError::Invalid("task.hidden needs two positive widths".into())),
        }
    }

    pub fn supervised_config(&self) -> Result<SupervisedConfig> {
        let reward_form = match self.get("task.reward_form") {
            "inverse" => RewardForm::Inverse,
            "inverse_minus_one" => RewardForm::InverseMinusOne,
            other => {
                return Err(ConfigError::BadValue {
                    key: "task.reward_form".into(),
                    value: other.into(),
                    expected: "inverse | inverse_minus_one",
                })
            }
        };
        let optimizer = match self.get("task.optimizer") {
            "adam" => TaskOptimizer::Adam,
            "sgd" => TaskOptimizer::Sgd,
            other => {
                return Err(ConfigError::BadValue {
                    key: "task.optimizer".into(),
                    value: other.into(),
                    expected: "adam | sgd",
                })
            }
        };
        let cfg = SupervisedConfig {
            lr: self.f64("task.lr")?,
            optimizer,
            batch_size: self.usize("task.batch_size")?,
            l1_weight: self.f64("task.lambda")?,
            objective: Objective::Alternate,
            max_steps: self.usize("task.max_steps")?,
            val_every: self.usize("task.val_every")?,
            patience: self.usize("task.patience")?,
            tol: self.f64("task.tol")?,
            reward_scale: self.f64("task.reward_scale")?,
            reward_form,
            features: self.feature_spec(2)?,
            keep_best: self.bool("task.keep_best")?,
        };
        if !(cfg.lr > 0.0) || cfg.batch_size == 0 || cfg.val_every == 0 || cfg.max_steps == 0 {
            return Err(ConfigError::Invalid("task lr, batch size, val cadence and max steps must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn reinforce_config(&self) -> Result<ReinforceConfig> {
        let cfg = ReinforceConfig {
            sequences_per_update: self.usize("trainer.sequences")?,
            clip: self.f64("trainer.clip")?,
            baseline_decay: self.f64("trainer.baseline_decay")?,
            learning_rate: self.f64("trainer.lr")?,
            max_episodes: self.usize("trainer.max_episodes")?,
            window: self.usize("trainer.window")?,
            plateau_tol: self.f64("trainer.plateau_tol")?,
            max_batches: self.budget()?,
        };
        if cfg.sequences_per_update == 0 || cfg.window == 0 || !(0.0..1.0).contains(&cfg.baseline_decay) {
            return Err(ConfigError::Invalid("bad REINFORCE settings".into()));
        }
        Ok(cfg)
    }

    pub fn ppo_config(&self) -> Result<PpoConfig> {
        Ok(PpoConfig {
            arch: self.controller_arch()?,
            gamma: self.f64("ppo.gamma")?,
            clip: self.f64("ppo.clip")?,
            capacity: self.usize("ppo.capacity")?,
            minibatch: self.usize("ppo.minibatch")?,
            sync_every: self.usize("ppo.sync_every")?,
            learning_rate: self.f64("ppo.lr")?,
            updates_per_segment: self.usize("ppo.updates_per_segment")?,
            reward_clip: self.f64("ppo.reward_clip")?,
            lookback: self.usize("ppo.lookback")?,
            reward_scale: self.f64("ppo.reward_scale")?,
            denom_floor: self.f64("ppo.denom_floor")?,
        })
    }

    pub fn gan_arch(&self) -> Result<GanArch> {
        let activation = match self.get("gan.activation") {
            "relu" => Activation::Relu,
            s => match s.strip_prefix("leaky").and_then(|v| v.parse().ok()) {
                Some(slope) => Activation::Leaky(slope),
                None => {
                    return Err(ConfigError::BadValue {
                        key: "gan.activation".into(),
                        value: s.into(),
                        expected: "relu | leaky<slope>",
                    })
                }
            },
        };
        Ok(GanArch {
            width: self.usize("gan.width")?,
            dz: self.usize("gan.dz")?,
            activation,
            norm: self.bool("gan.norm")?,
        })
    }

    pub fn gan_config(&self) -> Result<GanConfig> {
        let cfg = GanConfig {
            arch: self.gan_arch()?,
            lr: self.f64("gan.lr")?,
            beta1: self.f64("gan.beta1")?,
            batch_size: self.usize("gan.batch_size")?,
            train_size: self.usize("gan.train_size")?,
            segment_len: self.usize("gan.segment")?,
            total_steps: self.usize("gan.total_steps")?,
            eval_samples: self.usize("gan.eval_samples")?,
            feature_every: self.usize("gan.feature_every")?,
            feature_samples: self.usize("gan.feature_samples")?,
            non_saturating: self.bool("gan.non_saturating")?,
            reward_scale: self.f64("gan.reward_scale")?,
        };
        if cfg.batch_size == 0 || cfg.segment_len == 0 || cfg.train_size < cfg.batch_size {
            return Err(ConfigError::Invalid("bad GAN sizes".into()));
        }
        Ok(cfg)
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        MixtureSpec::ring(
            self.usize("gan.mixture_k")?,
            self.f64("gan.mixture_radius")?,
            self.f64("gan.mixture_std")?,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn gan_ratios(&self) -> Vec<String> {
        self.get("baselines.gan_ratios").split(',').map(|s| s.trim().to_string()).collect()
    }

    pub fn multitask_config(&self) -> Result<MultiTaskConfig> {
        let sizes = self.usize_list("multitask.sizes")?;
        let lrs = self.f64_list("multitask.lrs")?;
        let sizes: [usize; NUM_TASKS] = sizes
            .try_into()
            .map_err(|_| ConfigError::Invalid(format!("multitask.sizes needs {NUM_TASKS} entries")))?;
        let learning_rates: [f64; NUM_TASKS] = lrs
            .try_into()
            .map_err(|_| ConfigError::Invalid(format!("multitask.lrs needs {NUM_TASKS} entries")))?;
        Ok(MultiTaskConfig {
            d: self.usize("multitask.d")?,
            latent: self.usize("multitask.latent")?,
            sizes,
            noise_std: self.f64("multitask.noise_std")?,
            val_frac: self.f64("multitask.val_frac")?,
            learning_rates,
            batch_size: self.usize("multitask.batch_size")?,
            segment_len: self.usize("multitask.segment")?,
            total_steps: self.usize("multitask.total_steps")?,
            val_every: self.usize("multitask.val_every")?,
        })
    }

    /// Hidden-width pairs for supervised model transfer, `AxB,CxD`.
    pub fn transfer_hidden(&self) -> Result<Vec<(usize, usize)>> {
        let raw = self.get("transfer.hidden");
        raw.split(',')
            .map(|pair| {
                let parsed = pair
                    .trim()
                    .split_once('x')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                match parsed {
                    Some((a, b)) if a > 0 && b > 0 => Ok((a, b)),
                    _ => Err(ConfigError::BadValue {
                        key: "transfer.hidden".into(),
                        value: raw.into(),
                        expected: "comma-separated widths like 16x16,64x64",
                    }),
                }
            })
            .collect()
    }

    pub fn dgs_spec(&self) -> Result<GridSearchSpec> {
        Ok(GridSearchSpec {
            lo: self.f64("baselines.dgs_lo")?,
            hi: self.f64("baselines.dgs_hi")?,
            size: self.usize("baselines.dgs_size")?,
            scale: GridScale::Log,
        })
    }

    pub fn threshold_grid(&self) -> Result<Vec<f64>> {
        let (lo, hi, n) = (
            self.f64("baselines.th_lo")?,
            self.f64("baselines.th_hi")?,
            self.usize("baselines.th_size")?,
        );
        if n == 1 {
            return Ok(vec![lo]);
        }
        autoloss_core::baselines::log_grid(lo, hi, n).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips_and_hash_is_stable() {
        let cfg = ExperimentConfig::parse("task.kind = classification\ntask.lambda = 0.5 # comment\n").unwrap();
        assert_eq!(cfg.kind(), TaskKind::Classification);
        assert_eq!(cfg.f64("task.lambda").unwrap(), 0.5);
        assert_eq!(cfg.get("task.val_every"), "10");
        let again = ExperimentConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        let other = cfg.clone().with("task.lambda", 0.25).unwrap();
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::parse("split.fractions = 0.3,0.3,0.3,0.3,0.3"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("task.kind = classification\ntask.d = 20"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(ExperimentConfig::parse("nope = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(ExperimentConfig::parse("just text"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(
            ExperimentConfig::parse("task.kind = gan\ntrainer.kind = reinforce"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn every_kind_validates_with_defaults() {
        for kind in [TaskKind::Regression, TaskKind::Classification, TaskKind::Gan, TaskKind::MultiTask] {
            ExperimentConfig::for_task(kind).validate().unwrap();
        }
    }
}
