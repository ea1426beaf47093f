//! Pieces shared by every online learner: seeded random streams, the
//! simulated environment, step-size schedules, running statistics and the
//! per-iteration trace record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::exact::PolicyEvaluation;
use crate::model::{ActionKind, Event, EventModel, State};

const ENV_STREAM: u64 = 0;
const VIRTUAL_STREAM: u64 = 1;
const EXPLORE_STREAM: u64 = 2;

/// Three independent streams derived from one seed. Learners seeded alike
/// see the same uniforms for event sampling.
#[derive(Clone, Debug)]
pub struct Streams {
    pub env: ChaCha8Rng,
    pub virtual_samples: ChaCha8Rng,
    pub explore: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self { env: stream(ENV_STREAM), virtual_samples: stream(VIRTUAL_STREAM), explore: stream(EXPLORE_STREAM) }
    }
}

/// Draws the next event in state `s` from the environment stream.
pub fn draw_event(model: &EventModel, s: State, rng: &mut ChaCha8Rng) -> Event {
    let u: f64 = rng.random();
    model.sample_event(s, u)
}

/// `a(m) = 1/(⌊m/D⌋ + c)^e` on the faster timescale, `b(n) = k/n` on the slower one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub period: u64,
    pub offset: f64,
    pub exponent: f64,
    pub slow_scale: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { period: 100, offset: 2.0, exponent: 0.6, slow_scale: 10.0 }
    }
}

impl StepSchedule {
    /// Faster step for the `m`-th visit (`m ≥ 1`).
    #[inline]
    pub fn fast(&self, m: u64) -> f64 {
        debug_assert!(m >= 1);
        1.0 / ((m / self.period) as f64 + self.offset).powf(self.exponent)
    }

    /// Slower step at global iteration `n ≥ 1`.
    #[inline]
    pub fn slow(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        self.slow_scale / n as f64
    }

    /// Threshold updates switched off.
    pub fn frozen(self) -> Self {
        Self { slow_scale: 0.0, ..self }
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// How the running average reward is tracked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageRewardEstimator {
    /// `ρ̂ ← (1 − a(n))ρ̂ + a(n)·r_n` with the global faster schedule.
    StepSize,
    /// `ρ̂_n = (1/n)·Σ_{k≤n} r_k`.
    Cumulative,
    /// Mean of the rewards after the first `skip` iterations; the plain
    /// cumulative mean until then.
    AfterBurnIn { skip: u64 },
}

impl Default for AverageRewardEstimator {
    /// Ten burn-in records at the default trace stride.
    fn default() -> Self {
        AverageRewardEstimator::AfterBurnIn { skip: 100 }
    }
}

/// Iteration counter, cumulative faster step size and the average-reward estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub n: u64,
    cum_a: CompensatedSum,
    reward_sum: CompensatedSum,
    tail_sum: CompensatedSum,
    pub rho_hat: f64,
    pub estimator: AverageRewardEstimator,
}

impl Progress {
    pub fn new(estimator: AverageRewardEstimator) -> Self {
        Self {
            n: 0,
            cum_a: CompensatedSum::default(),
            reward_sum: CompensatedSum::default(),
            tail_sum: CompensatedSum::default(),
            rho_hat: 0.0,
            estimator,
        }
    }

    /// Records the reward of iteration `n + 1` and advances.
    pub fn advance(&mut self, schedule: &StepSchedule, reward: f64) {
        self.n += 1;
        let a = schedule.fast(self.n);
        self.cum_a.add(a);
        self.reward_sum.add(reward);
        self.rho_hat = match self.estimator {
            AverageRewardEstimator::StepSize => (1.0 - a) * self.rho_hat + a * reward,
            AverageRewardEstimator::Cumulative => self.reward_sum.value() / self.n as f64,
            AverageRewardEstimator::AfterBurnIn { skip } => {
                if self.n > skip {
                    self.tail_sum.add(reward);
                    self.tail_sum.value() / (self.n - skip) as f64
                } else {
                    self.reward_sum.value() / self.n as f64
                }
            }
        };
    }

    /// `Σ_{k ≤ n} a(k)`.
    pub fn cum_a(&self) -> f64 {
        self.cum_a.value()
    }
}

/// One trace row. Threshold learners fill `thresholds`; value-based
/// baselines fill `greedy` with the first blocking state per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: u64,
    pub cum_a: f64,
    pub rho_hat: f64,
    pub thresholds: Option<Vec<f64>>,
    pub greedy: Option<Vec<usize>>,
    pub state: State,
}

/// Table entries written by one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteCounts {
    pub values: usize,
    pub thresholds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub state: State,
    pub event: Event,
    pub action: ActionKind,
    pub next_state: State,
    pub reward: f64,
    pub writes: WriteCounts,
}

/// Common surface of SALMUT and the tabular baselines.
pub trait OnlineLearner {
    fn step(&mut self) -> StepReport;
    fn progress(&self) -> &Progress;
    fn current_state(&self) -> State;
    fn record(&self) -> TraceRecord;
    /// Per-class admission thresholds of the current (deterministic) policy.
    fn policy_thresholds(&self) -> Vec<usize>;
    /// Exact evaluation of the current deterministic policy.
    fn evaluate_policy(&self) -> Result<PolicyEvaluation, SolverError>;
    /// Number of reals the learner stores.
    fn storage(&self) -> usize;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fast_step_examples() {
        let s = StepSchedule::default();
        assert_abs_diff_eq!(s.fast(1), 0.659_753_955_386_447_1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fast(250), 0.435_275_281_648_062, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fast(100), 0.517_281_857_971_229_4, epsilon = 1e-12);
    }

    #[test]
    fn slow_step_examples() {
        let s = StepSchedule::default();
        assert_eq!(s.slow(10), 1.0);
        assert_abs_diff_eq!(s.slow(10_000), 0.001, epsilon = 1e-18);
        let ratios: Vec<f64> = [10u64, 1_000, 100_000, 1_000_000].iter().map(|&n| s.slow(n) / s.fast(n)).collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!(*ratios.last().unwrap() < ratios[0] / 100.0);
        assert_eq!(s.frozen().slow(5), 0.0);
    }

    #[test]
    fn compensated_sum_matches_exact() {
        let s = StepSchedule::default();
        let mut acc = CompensatedSum::default();
        let mut naive = 0.0f64;
        for k in 1..=100_000u64 {
            acc.add(s.fast(k));
            naive += s.fast(k);
        }
        // closed form: blocks of 100 equal steps
        let mut exact = 99.0 * s.fast(1);
        for block in 1..1000u64 {
            exact += 100.0 * s.fast(block * 100);
        }
        exact += s.fast(100_000);
        assert!((acc.value() - exact).abs() < 1e-12 * exact.max(1.0) * 10.0);
        assert!((acc.value() - naive).abs() < 1e-8);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = Streams::new(7);
        let mut b = Streams::new(7);
        let xa: Vec<u64> = (0..4).map(|_| a.env.random()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.env.random()).collect();
        assert_eq!(xa, xb);
        let v: Vec<u64> = (0..4).map(|_| a.virtual_samples.random()).collect();
        assert_ne!(xa, v);
    }

    #[test]
    fn estimators() {
        let s = StepSchedule::default();
        let mut cum = Progress::new(AverageRewardEstimator::Cumulative);
        let mut ewma = Progress::new(AverageRewardEstimator::StepSize);
        for r in [1.0, 2.0, 3.0] {
            cum.advance(&s, r);
            ewma.advance(&s, r);
        }
        assert_abs_diff_eq!(cum.rho_hat, 2.0, epsilon = 1e-15);
        let a = s.fast(1);
        let mut expect = 0.0;
        for r in [1.0, 2.0, 3.0] {
            expect = (1.0 - a) * expect + a * r;
        }
        assert_abs_diff_eq!(ewma.rho_hat, expect, epsilon = 1e-15);
        assert_eq!(cum.n, 3);

        let mut tail = Progress::new(AverageRewardEstimator::AfterBurnIn { skip: 2 });
        tail.advance(&s, 10.0);
        assert_eq!(tail.rho_hat, 10.0);
        tail.advance(&s, 20.0);
        assert_eq!(tail.rho_hat, 15.0);
        for r in [1.0, 2.0, 3.0] {
            tail.advance(&s, r);
        }
        assert_abs_diff_eq!(tail.rho_hat, 2.0, epsilon = 1e-15);
    }
}
