//! Non-learned schedules: threshold heuristics, fixed GAN ratios, the
//! multi-task FixedRatio / FineTuned / target-only schedules, and the
//! search loops (threshold tuning, dense λ grid search) around them.

use crate::error::{Error, Result};
use crate::features::HistoryCache;
use crate::numkit::{self, Rng};
use crate::sched::{Choice, Observation, Schedule};
use crate::tasks::supervised::{L1_LOSS, TASK_LOSS};

/// Runs a constant action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantSchedule(pub usize);

impl Schedule for ConstantSchedule {
    fn decide(&mut self, _obs: &Observation<'_>, _rng: &mut Rng) -> Result<Choice> {
        Ok(Choice {
            index: self.0,
            log_prob: 0.0,
        })
    }
}

/// Samples actions uniformly at random.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformSchedule(pub usize);

impl Schedule for UniformSchedule {
    fn decide(&mut self, _obs: &Observation<'_>, rng: &mut Rng) -> Result<Choice> {
        Ok(Choice {
            index: rng.below(self.0),
            log_prob: -(self.0 as f64).ln(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeuristicKind {
    /// Task loss on validation vs. on training batches.
    S1,
    /// L1 loss vs. task loss on validation.
    S2,
    /// L1 gradient norm vs. task gradient norm.
    S3,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] = [HeuristicKind::S1, HeuristicKind::S2, HeuristicKind::S3];

    pub fn name(&self) -> &'static str {
        match self {
            HeuristicKind::S1 => "s1",
            HeuristicKind::S2 => "s2",
            HeuristicKind::S3 => "s3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase())
    }
}

/// Picks the L1 action iff `(A − B)/B > th`; the task action otherwise
/// (including when `|B| < 1e-12`).
pub fn heuristic_decide(kind: HeuristicKind, th: f64, cache: &HistoryCache) -> usize {
    let (a, b) = match kind {
        HeuristicKind::S1 => (cache.validation().value, cache.loss(TASK_LOSS)),
        HeuristicKind::S2 => (cache.loss(L1_LOSS), cache.validation().value),
        HeuristicKind::S3 => (cache.grad_norm(L1_LOSS), cache.grad_norm(TASK_LOSS)),
    };
    if b.abs() < 1e-12 || !a.is_finite() || !b.is_finite() {
        return TASK_LOSS;
    }
    if (a - b) / b > th {
        L1_LOSS
    } else {
        TASK_LOSS
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicSchedule {
    pub kind: HeuristicKind,
    pub th: f64,
}

impl Schedule for HeuristicSchedule {
    fn decide(&mut self, obs: &Observation<'_>, _rng: &mut Rng) -> Result<Choice> {
        Ok(Choice {
            index: heuristic_decide(self.kind, self.th, obs.cache),
            log_prob: 0.0,
        })
    }
}

/// `n` points from `lo` to `hi`, log-spaced.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::InvalidArgument(format!("bad log grid {lo}:{hi}:{n}")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

pub fn default_threshold_grid() -> Vec<f64> {
    log_grid(1e-3, 10.0, 10).expect("valid grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSearchSpec {
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
    pub scale: GridScale,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            lo: 1e-4,
            hi: 10.0,
            size: 50,
            scale: GridScale::Log,
        }
    }
}

impl GridSearchSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        if self.size == 1 {
            return Ok(vec![self.lo]);
        }
        match self.scale {
            GridScale::Log => log_grid(self.lo, self.hi, self.size),
            GridScale::Linear => {
                if !(self.hi > self.lo) || self.size < 2 {
                    return Err(Error::InvalidArgument("bad linear grid".into()));
                }
                Ok((0..self.size)
                    .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.size - 1) as f64)
                    .collect())
            }
        }
    }
}

/// One row of a search: the knob value and the metrics of its run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRow {
    pub value: f64,
    pub val_metric: f64,
    pub metrics: Vec<(String, f64)>,
    pub batches: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_value: f64,
    pub best_val_metric: f64,
    pub rows: Vec<SearchRow>,
}

impl SearchResult {
    pub fn best_row(&self) -> &SearchRow {
        self.rows
            .iter()
            .find(|r| r.value == self.best_value)
            .expect("best value comes from the rows")
    }

    pub fn total_batches(&self) -> u64 {
        self.rows.iter().map(|r| r.batches).sum()
    }
}

fn argmin_search(rows: Vec<SearchRow>) -> Result<SearchResult> {
    let best = rows
        .iter()
        .filter(|r| r.val_metric.is_finite())
        .min_by(|a, b| a.val_metric.total_cmp(&b.val_metric))
        .ok_or_else(|| Error::InvalidArgument("no finite run in the search".into()))?;
    Ok(SearchResult {
        best_value: best.value,
        best_val_metric: best.val_metric,
        rows: rows.clone(),
    })
}

/// Run `run(value)` for every grid point and keep the argmin of the
/// returned validation metric. `run` returns `(val metric, metrics, batches)`.
pub fn search<F>(grid: &[f64], mut run: F) -> Result<SearchResult>
where
    F: FnMut(f64) -> Result<(f64, Vec<(String, f64)>, u64)>,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty search grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let (val_metric, metrics, batches) = run(value)?;
        rows.push(SearchRow {
            value,
            val_metric,
            metrics,
            batches,
        });
    }
    argmin_search(rows)
}

/// Threshold tuning for a heuristic: one run per threshold.
pub fn tune_threshold<F>(grid: &[f64], run: F) -> Result<SearchResult>
where
    F: FnMut(f64) -> Result<(f64, Vec<(String, f64)>, u64)>,
{
    search(grid, run)
}

/// Dense grid search over the combined-objective weight λ.
pub fn dense_grid_search<F>(spec: &GridSearchSpec, run: F) -> Result<SearchResult>
where
    F: FnMut(f64) -> Result<(f64, Vec<(String, f64)>, u64)>,
{
    search(&spec.points()?, run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioDirection {
    /// One discriminator step, then `K` generator steps.
    OneToK,
    /// `K` discriminator steps, then one generator step.
    KToOne,
}

/// Cyclic GAN schedule over actions `gen_action` / `disc_action`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedGanSchedule {
    pub k: usize,
    pub direction: RatioDirection,
    pub gen_action: usize,
    pub disc_action: usize,
    pos: usize,
}

impl FixedGanSchedule {
    pub fn new(k: usize, direction: RatioDirection) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        Ok(FixedGanSchedule {
            k,
            direction,
            gen_action: crate::gan::GEN_LOSS,
            disc_action: crate::gan::DISC_LOSS,
            pos: 0,
        })
    }

    /// `"1:K"` means one D step per `K` G steps; `"K:1"` the reverse.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("bad ratio {s:?}")))?;
        let a: usize = a.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad ratio {s:?}")))?;
        let b: usize = b.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad ratio {s:?}")))?;
        match (a, b) {
            (1, k) => Self::new(k, RatioDirection::OneToK),
            (k, 1) => Self::new(k, RatioDirection::KToOne),
            _ => Err(Error::InvalidArgument(format!("ratio {s:?} must have a 1 on one side"))),
        }
    }

    pub fn label(&self) -> String {
        match self.direction {
            RatioDirection::OneToK => format!("1:{}", self.k),
            RatioDirection::KToOne => format!("{}:1", self.k),
        }
    }

    pub fn next_action(&mut self) -> usize {
        let i = self.pos % (self.k + 1);
        self.pos += 1;
        match self.direction {
            RatioDirection::OneToK => {
                if i == 0 {
                    self.disc_action
                } else {
                    self.gen_action
                }
            }
            RatioDirection::KToOne => {
                if i < self.k {
                    self.disc_action
                } else {
                    self.gen_action
                }
            }
        }
    }
}

impl Schedule for FixedGanSchedule {
    fn decide(&mut self, _obs: &Observation<'_>, _rng: &mut Rng) -> Result<Choice> {
        Ok(Choice {
            index: self.next_action(),
            log_prob: 0.0,
        })
    }
}

/// Samples task `m` with probability `P_m / ΣP`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRatioSchedule {
    probs: Vec<f64>,
}

impl FixedRatioSchedule {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("data sizes must be positive".into()));
        }
        let total: usize = sizes.iter().sum();
        Ok(FixedRatioSchedule {
            probs: sizes.iter().map(|&s| s as f64 / total as f64).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl Schedule for FixedRatioSchedule {
    fn decide(&mut self, _obs: &Observation<'_>, rng: &mut Rng) -> Result<Choice> {
        let index = numkit::sample_categorical(&self.probs, rng)?;
        Ok(Choice {
            index,
            log_prob: self.probs[index].ln(),
        })
    }
}

/// FixedRatio until `switch_step`, then the target task only.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTunedSchedule {
    pub base: FixedRatioSchedule,
    pub switch_step: usize,
    pub target: usize,
}

impl Schedule for FineTunedSchedule {
    fn decide(&mut self, obs: &Observation<'_>, rng: &mut Rng) -> Result<Choice> {
        if obs.step >= self.switch_step {
            return Ok(Choice {
                index: self.target,
                log_prob: 0.0,
            });
        }
        self.base.decide(obs, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gan_cycles() {
        let mut s = FixedGanSchedule::new(1, RatioDirection::OneToK).unwrap();
        let seq: Vec<usize> = (0..4).map(|_| s.next_action()).collect();
        assert_eq!(seq, vec![1, 0, 1, 0]);
        let mut a = FixedGanSchedule::new(1, RatioDirection::KToOne).unwrap();
        let mut b = FixedGanSchedule::new(1, RatioDirection::OneToK).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_action(), b.next_action());
        }
        let mut s = FixedGanSchedule::parse("1:5").unwrap();
        let seq: Vec<usize> = (0..60).map(|_| s.next_action()).collect();
        assert_eq!(seq.iter().filter(|&&a| a == 1).count(), 10);
        assert_eq!(seq.iter().filter(|&&a| a == 0).count(), 50);
        assert!(FixedGanSchedule::parse("2:3").is_err());
    }

    #[test]
    fn grids() {
        let g = default_threshold_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-3).abs() < 1e-15 && g[9] == 10.0);
        let spec = GridSearchSpec::default();
        assert_eq!(spec.points().unwrap().len(), 50);
        let one = GridSearchSpec {
            size: 1,
            ..spec
        };
        assert_eq!(one.points().unwrap(), vec![1e-4]);
    }

    #[test]
    fn fixed_ratio_probs() {
        let s = FixedRatioSchedule::new(&[2000, 6000, 6000]).unwrap();
        let expect = [1.0 / 7.0, 3.0 / 7.0, 3.0 / 7.0];
        for (p, e) in s.probs().iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn search_argmin() {
        let r = search(&[1.0, 2.0, 3.0], |v| Ok(((v - 2.0).abs(), vec![], 1))).unwrap();
        assert_eq!(r.best_value, 2.0);
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.total_batches(), 3);
        assert!(search(&[], |_| Ok((0.0, vec![], 0))).is_err());
    }
}
