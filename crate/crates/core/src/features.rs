//! Optimization-state features and the lazily refreshed history they are
//! built from.
//!
//! Loss values and gradient magnitudes are only recomputed for the loss the
//! schedule actually optimized; everything else keeps its latest value and
//! the step at which it was computed.

use crate::error::{Error, Result};

/// Decay of the validation EMAs.
pub const DEFAULT_FEATURE_EMA: f64 = 0.9;
const LOG_RATIO_CLAMP: f64 = 10.0;
const LOSS_RATIO_CLAMP: f64 = 100.0;
const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Entry {
    pub value: f64,
    pub stamp: Option<usize>,
}

impl Entry {
    fn set(&mut self, value: f64, step: usize) {
        self.value = value;
        self.stamp = Some(step);
    }
}

/// Latest validation metric plus EMAs of the metric and of its first and
/// second differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationStats {
    pub value: f64,
    pub ema: f64,
    pub ema_d1: f64,
    pub ema_d2: f64,
    pub stamp: Option<usize>,
    prev_value: Option<f64>,
    prev_d1: Option<f64>,
    decay: f64,
}

impl ValidationStats {
    fn new(decay: f64) -> Self {
        ValidationStats {
            value: 0.0,
            ema: 0.0,
            ema_d1: 0.0,
            ema_d2: 0.0,
            stamp: None,
            prev_value: None,
            prev_d1: None,
            decay,
        }
    }

    fn push(&mut self, value: f64, step: usize) {
        let eta = self.decay;
        match self.prev_value {
            None => self.ema = value,
            Some(prev) => {
                self.ema = eta * self.ema + (1.0 - eta) * value;
                let d1 = value - prev;
                self.ema_d1 = eta * self.ema_d1 + (1.0 - eta) * d1;
                if let Some(prev_d1) = self.prev_d1 {
                    self.ema_d2 = eta * self.ema_d2 + (1.0 - eta) * (d1 - prev_d1);
                }
                self.prev_d1 = Some(d1);
            }
        }
        self.prev_value = Some(value);
        self.value = value;
        self.stamp = Some(step);
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.value, self.ema, self.ema_d1, self.ema_d2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Loss(usize),
    /// Dimension-normalized gradient magnitude `‖∇ℓ_m‖₂ / sqrt(dim θ)`.
    GradNorm(usize),
    Validation,
    /// Task-specific scalar, e.g. the discriminator's real/fake error.
    Extra(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCache {
    losses: Vec<Entry>,
    grad_norms: Vec<Entry>,
    validation: ValidationStats,
    extras: Vec<Entry>,
}

impl HistoryCache {
    pub fn new(num_losses: usize, num_extras: usize) -> Self {
        Self::with_decay(num_losses, num_extras, DEFAULT_FEATURE_EMA)
    }

    pub fn with_decay(num_losses: usize, num_extras: usize, decay: f64) -> Self {
        HistoryCache {
            losses: vec![Entry::default(); num_losses],
            grad_norms: vec![Entry::default(); num_losses],
            validation: ValidationStats::new(decay),
            extras: vec![Entry::default(); num_extras],
        }
    }

    pub fn num_losses(&self) -> usize {
        self.losses.len()
    }

    pub fn touch(&mut self, quantity: Quantity, value: f64, step: usize) -> Result<()> {
        let slot = match quantity {
            Quantity::Loss(m) => self.losses.get_mut(m),
            Quantity::GradNorm(m) => self.grad_norms.get_mut(m),
            Quantity::Extra(i) => self.extras.get_mut(i),
            Quantity::Validation => {
                self.validation.push(value, step);
                return Ok(());
            }
        };
        slot.ok_or_else(|| Error::InvalidArgument(format!("{quantity:?} is not a registered cache entry")))?
            .set(value, step);
        Ok(())
    }

    /// True once every entry has been written at least once.
    pub fn is_bootstrapped(&self) -> bool {
        self.losses.iter().all(|e| e.stamp.is_some())
            && self.grad_norms.iter().all(|e| e.stamp.is_some())
            && self.extras.iter().all(|e| e.stamp.is_some())
            && self.validation.stamp.is_some()
    }

    pub fn loss(&self, m: usize) -> f64 {
        self.losses[m].value
    }

    pub fn grad_norm(&self, m: usize) -> f64 {
        self.grad_norms[m].value
    }

    pub fn extra(&self, i: usize) -> f64 {
        self.extras[i].value
    }

    pub fn entry(&self, quantity: Quantity) -> Option<Entry> {
        match quantity {
            Quantity::Loss(m) => self.losses.get(m).copied(),
            Quantity::GradNorm(m) => self.grad_norms.get(m).copied(),
            Quantity::Extra(i) => self.extras.get(i).copied(),
            Quantity::Validation => Some(Entry {
                value: self.validation.value,
                stamp: self.validation.stamp,
            }),
        }
    }

    pub fn validation(&self) -> &ValidationStats {
        &self.validation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureBlock {
    Progress,
    GradNorms,
    LossValues,
    Validation,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 4] = [
        FeatureBlock::Progress,
        FeatureBlock::GradNorms,
        FeatureBlock::LossValues,
        FeatureBlock::Validation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureBlock::Progress => "progress",
            FeatureBlock::GradNorms => "grad_norms",
            FeatureBlock::LossValues => "loss_values",
            FeatureBlock::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    fn width(&self, num_losses: usize) -> usize {
        match self {
            FeatureBlock::Progress => 1,
            FeatureBlock::GradNorms | FeatureBlock::LossValues => num_losses,
            FeatureBlock::Validation => 4,
        }
    }
}

/// Ordered set of enabled feature blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    blocks: Vec<FeatureBlock>,
    num_losses: usize,
}

impl FeatureSpec {
    pub fn full(num_losses: usize) -> Self {
        FeatureSpec {
            blocks: FeatureBlock::ALL.to_vec(),
            num_losses,
        }
    }

    /// The full spec with one block dropped (ablation).
    pub fn without(num_losses: usize, dropped: FeatureBlock) -> Self {
        FeatureSpec {
            blocks: FeatureBlock::ALL
                .into_iter()
                .filter(|b| *b != dropped)
                .collect(),
            num_losses,
        }
    }

    pub fn blocks(&self) -> &[FeatureBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.width(self.num_losses)).sum()
    }
}

/// `sign(x)·ln(1 + |x|)`: order-preserving, near-identity for small values,
/// and keeps early-training loss magnitudes from saturating the controller.
pub fn squash(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Progress `t/T`, then squashed normalized gradient magnitudes, latest loss
/// values and validation statistics, in that order, skipping disabled blocks.
pub fn extract_supervised_features(
    cache: &HistoryCache,
    t: usize,
    horizon: usize,
    spec: &FeatureSpec,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(spec.dim());
    let m = cache.num_losses().min(spec.num_losses);
    for block in &spec.blocks {
        match block {
            FeatureBlock::Progress => x.push(t as f64 / horizon.max(1) as f64),
            FeatureBlock::GradNorms => x.extend((0..m).map(|i| squash(cache.grad_norm(i)))),
            FeatureBlock::LossValues => x.extend((0..m).map(|i| squash(cache.loss(i)))),
            FeatureBlock::Validation => x.extend(cache.validation.as_array().map(squash)),
        }
    }
    x
}

pub const GAN_FEATURE_DIM: usize = 9;

/// GAN variant: `[t/T, g1, g2, ln(g1/g2), ℓ1, ℓ2, ℓ1/ℓ2, IS, D_err]`.
///
/// Expects loss 0 = generator, loss 1 = discriminator, validation = the
/// latest inception score and extra 0 = the discriminator's error.
pub fn extract_gan_features(cache: &HistoryCache, t: usize, horizon: usize) -> Vec<f64> {
    let (g1, g2) = (cache.grad_norm(0), cache.grad_norm(1));
    let (l1, l2) = (cache.loss(0), cache.loss(1));
    let log_ratio = (g1.max(RATIO_FLOOR).ln() - g2.max(RATIO_FLOOR).ln())
        .clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    let loss_ratio = if l2.abs() < RATIO_FLOOR {
        if l1 == 0.0 {
            0.0
        } else {
            LOSS_RATIO_CLAMP * l1.signum() * if l2 < 0.0 { -1.0 } else { 1.0 }
        }
    } else {
        (l1 / l2).clamp(-LOSS_RATIO_CLAMP, LOSS_RATIO_CLAMP)
    };
    vec![
        t as f64 / horizon.max(1) as f64,
        g1,
        g2,
        log_ratio,
        l1,
        l2,
        loss_ratio,
        cache.validation.value,
        cache.extra(0),
    ]
}
