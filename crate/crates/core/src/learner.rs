//! Two-timescale learning of an ordered threshold vector.
//!
//! On the faster timescale the relative value of the visited state is moved
//! towards `r + V(s') − V(s*)` with a step indexed by that state's visit
//! count. On the slower timescale the threshold of the arriving class takes a
//! stochastic gradient step built from one virtual transition `(α, β)`, then
//! later components are re-projected so the vector stays ordered.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::exact::{average_reward_sigma, PolicyEvaluation};
use crate::model::{ActionKind, Event, EventModel, State};
use crate::sim::{
    draw_event, AverageRewardEstimator, OnlineLearner, Progress, StepReport, StepSchedule, Streams, TraceRecord,
    WriteCounts,
};
use crate::threshold::{policy_action, smooth_prob_grad, ThresholdVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SalmutConfig {
    pub schedule: StepSchedule,
    /// Keep the reward-derivative part of the threshold step.
    pub include_g_term: bool,
    pub estimator: AverageRewardEstimator,
    /// Starting thresholds; all zero when absent.
    pub initial_thresholds: Option<Vec<f64>>,
    /// Starting value table; all zero when absent.
    pub initial_values: Option<Vec<f64>>,
}

impl Default for SalmutConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::default(),
            include_g_term: true,
            estimator: AverageRewardEstimator::default(),
            initial_thresholds: None,
            initial_values: None,
        }
    }
}

/// The iterate `(V, τ)` plus visit counts and running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub values: Vec<f64>,
    pub thresholds: ThresholdVector,
    pub visits: Vec<u64>,
    pub progress: Progress,
    pub state: State,
}

/// Outcome of the virtual transition used by the threshold step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualSample {
    /// `true` selects the admit rule `P1`.
    pub alpha: bool,
    /// `true` selects the block reward `−h(s)`.
    pub beta: bool,
    pub next_state: State,
    pub reward: f64,
}

impl VirtualSample {
    /// Builds the sample for given bits.
    pub fn from_bits(model: &EventModel, s: State, event: Event, alpha: bool, beta: bool) -> Self {
        let next_state = if alpha { (s + 1).min(model.max_state()) } else { s };
        let reward = if beta { -model.cost(s) } else { model.reward(event) - model.cost(s) };
        Self { alpha, beta, next_state, reward }
    }
}

/// Draws two independent fair bits from `rng`.
pub fn virtual_sample<R: Rng>(model: &EventModel, s: State, event: Event, rng: &mut R) -> VirtualSample {
    let alpha = rng.random_bool(0.5);
    let beta = rng.random_bool(0.5);
    VirtualSample::from_bits(model, s, event, alpha, beta)
}

impl LearnerState {
    pub fn new(model: &EventModel, config: &SalmutConfig) -> Result<Self, SolverError> {
        let thresholds = match &config.initial_thresholds {
            Some(v) => ThresholdVector::for_model(model, v.clone())?,
            None => ThresholdVector::zeros(model.num_classes(), model.max_state()),
        };
        let values = match &config.initial_values {
            Some(v) if v.len() == model.num_states() => v.clone(),
            Some(v) => {
                return Err(SolverError::Model(crate::error::ModelError::Shape(format!(
                    "initial values have {} entries, model has {} states",
                    v.len(),
                    model.num_states()
                ))))
            }
            None => vec![0.0; model.num_states()],
        };
        Ok(Self {
            values,
            thresholds,
            visits: vec![0; model.num_states()],
            progress: Progress::new(config.estimator),
            state: 0,
        })
    }

    /// Relative value update of state `s` after observing `reward` and `next`.
    /// Returns the number of value entries written (always one).
    pub fn faster_value_update(
        &mut self,
        model: &EventModel,
        schedule: &StepSchedule,
        s: State,
        reward: f64,
        next: State,
    ) -> usize {
        self.visits[s] += 1;
        let a = schedule.fast(self.visits[s]);
        let target = reward + self.values[next] - self.values[model.reference_state()];
        self.values[s] = (1.0 - a) * self.values[s] + a * target;
        1
    }

    /// Threshold step for `class` at global iteration `n`, using `value_at_next`
    /// as the pre-update `V_n(ŝ)`. Returns the number of components written.
    #[allow(clippy::too_many_arguments)]
    pub fn slower_threshold_update(
        &mut self,
        schedule: &StepSchedule,
        n: u64,
        s: State,
        class: usize,
        sample: &VirtualSample,
        value_at_next: f64,
        include_g_term: bool,
    ) -> usize {
        let increment = threshold_increment(
            schedule.slow(n),
            s,
            self.thresholds.get(class),
            sample,
            value_at_next,
            include_g_term,
        );
        let x = self.thresholds.get(class) + increment;
        self.thresholds.set_projected(class, x)
    }
}

/// `b·∇f(s, τ)·[∓ĥ_β + (−1)^α V(ŝ)]`. Both random terms carry the sign of
/// `(P0 − P1)`: the admit branch (`α = 1`, `β = 0`) enters negatively, so the
/// expected step is `½·b·∇f·(V(s) − V(s+1) − R)`, half the per-event
/// contribution to the closed-form gradient.
pub fn threshold_increment(
    slow_step: f64,
    s: State,
    threshold: f64,
    sample: &VirtualSample,
    value_at_next: f64,
    include_g_term: bool,
) -> f64 {
    let value_term = if sample.alpha { -value_at_next } else { value_at_next };
    let reward_term = if !include_g_term {
        0.0
    } else if sample.beta {
        sample.reward
    } else {
        -sample.reward
    };
    slow_step * smooth_prob_grad(s as f64, threshold) * (reward_term + value_term)
}

/// SALMUT learner bound to one model and one seed.
#[derive(Clone, Debug)]
pub struct Salmut<'m> {
    model: &'m EventModel,
    config: SalmutConfig,
    state: LearnerState,
    streams: Streams,
}

impl<'m> Salmut<'m> {
    pub fn new(model: &'m EventModel, config: SalmutConfig, seed: u64) -> Result<Self, SolverError> {
        let state = LearnerState::new(model, &config)?;
        Ok(Self { model, config, state, streams: Streams::new(seed) })
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn config(&self) -> &SalmutConfig {
        &self.config
    }

    pub fn thresholds(&self) -> &ThresholdVector {
        &self.state.thresholds
    }

    pub fn values(&self) -> &[f64] {
        &self.state.values
    }

    pub fn run(&mut self, iterations: u64) {
        for _ in 0..iterations {
            self.step();
        }
    }
}

impl OnlineLearner for Salmut<'_> {
    fn step(&mut self) -> StepReport {
        let model = self.model;
        let schedule = self.config.schedule;
        let s = self.state.state;
        let event = draw_event(model, s, &mut self.streams.env);
        let action = policy_action(model, &self.state.thresholds, s, event);
        let next = model.next_state(s, action);
        let reward = model.reward_unchecked(s, event, action);
        let n = self.state.progress.n + 1;

        // V_n(ŝ) for ŝ ∈ {s, s+1}; only V(s) changes below
        let before_s = self.state.values[s];
        let before_up = self.state.values[(s + 1).min(model.max_state())];

        let mut writes = WriteCounts {
            values: self.state.faster_value_update(model, &schedule, s, reward, next),
            thresholds: 0,
        };

        if let Some(class) = model.class_of(event) {
            if s < model.max_state() {
                let sample = virtual_sample(model, s, event, &mut self.streams.virtual_samples);
                let v_hat = if sample.next_state == s { before_s } else { before_up };
                writes.thresholds = self.state.slower_threshold_update(
                    &schedule,
                    n,
                    s,
                    class,
                    &sample,
                    v_hat,
                    self.config.include_g_term,
                );
            }
        }

        self.state.progress.advance(&schedule, reward);
        self.state.state = next;
        StepReport { state: s, event, action, next_state: next, reward, writes }
    }

    fn progress(&self) -> &Progress {
        &self.state.progress
    }

    fn current_state(&self) -> State {
        self.state.state
    }

    fn record(&self) -> TraceRecord {
        let p = &self.state.progress;
        TraceRecord {
            n: p.n,
            cum_a: p.cum_a(),
            rho_hat: p.rho_hat,
            thresholds: Some(self.state.thresholds.values().to_vec()),
            greedy: None,
            state: self.state.state,
        }
    }

    fn policy_thresholds(&self) -> Vec<usize> {
        self.state.thresholds.rounded()
    }

    fn evaluate_policy(&self) -> Result<PolicyEvaluation, SolverError> {
        let tau = ThresholdVector::from_integers(&self.policy_thresholds(), self.model.max_state())?;
        average_reward_sigma(self.model, &tau, false)
    }

    fn storage(&self) -> usize {
        self.model.num_states() + self.model.num_classes()
    }
}

/// Action the learner takes for `event` in `s` (forced actions included).
pub fn salmut_action(model: &EventModel, tau: &ThresholdVector, s: State, event: Event) -> ActionKind {
    policy_action(model, tau, s, event)
}
