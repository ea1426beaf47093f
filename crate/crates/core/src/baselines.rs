//! Tabular baselines on the same environment stream as SALMUT: relative
//! (RVI) Q-learning with ε-greedy exploration and post-decision-state
//! learning with greedy one-step lookahead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::exact::{evaluate_admission_rule, PolicyEvaluation};
use crate::model::{ActionKind, Event, EventModel, State};
use crate::sim::{
    draw_event, AverageRewardEstimator, OnlineLearner, Progress, StepReport, StepSchedule, Streams, TraceRecord,
    WriteCounts,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub schedule: StepSchedule,
    pub estimator: AverageRewardEstimator,
    /// Exploration rate of Q-learning; PDS learning ignores it.
    pub epsilon: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { schedule: StepSchedule::default(), estimator: AverageRewardEstimator::default(), epsilon: 0.1 }
    }
}

/// Feasible actions in index order. Ties in a greedy choice go to the first.
fn actions(model: &EventModel, s: State, event: Event) -> &'static [ActionKind] {
    if !model.is_controlled(event) {
        &[ActionKind::Continue]
    } else if s < model.max_state() {
        &[ActionKind::Block, ActionKind::Admit]
    } else {
        &[ActionKind::Block]
    }
}

/// `Q(s, i, a)` over feasible triples with positive event rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    values: Vec<f64>,
    visits: Vec<u64>,
    // offset of (s, i) into `values`, or None when the event cannot fire
    offsets: Vec<Option<usize>>,
    num_events: usize,
    reference: (State, Event),
}

impl QTable {
    /// Zero table with reference pair `(s*, first controlled event)`.
    pub fn new(model: &EventModel) -> Self {
        let num_events = model.num_events();
        let mut offsets = Vec::with_capacity(model.num_states() * num_events);
        let mut len = 0;
        for s in 0..model.num_states() {
            for i in 0..num_events {
                if model.rate(s, i) > 0.0 {
                    offsets.push(Some(len));
                    len += actions(model, s, i).len();
                } else {
                    offsets.push(None);
                }
            }
        }
        let reference_event = model.controlled_events().first().copied().unwrap_or(0);
        Self {
            values: vec![0.0; len],
            visits: vec![0; len],
            offsets,
            num_events,
            reference: (model.reference_state(), reference_event),
        }
    }

    /// Stored entries.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn index(&self, model: &EventModel, s: State, event: Event, action: ActionKind) -> usize {
        let base = self.offsets[s * self.num_events + event].expect("event fires in this state");
        base + actions(model, s, event).iter().position(|&a| a == action).expect("feasible action")
    }

    pub fn get(&self, model: &EventModel, s: State, event: Event, action: ActionKind) -> f64 {
        self.values[self.index(model, s, event, action)]
    }

    pub fn visits(&self, model: &EventModel, s: State, event: Event, action: ActionKind) -> u64 {
        self.visits[self.index(model, s, event, action)]
    }

    /// Greedy action and its value; ties go to the lowest action index.
    pub fn greedy(&self, model: &EventModel, s: State, event: Event) -> (ActionKind, f64) {
        let mut best = (ActionKind::Continue, f64::NEG_INFINITY);
        for &a in actions(model, s, event) {
            let q = self.get(model, s, event, a);
            if q > best.1 {
                best = (a, q);
            }
        }
        best
    }

    /// `max_a Q(s*, i*, a)`.
    pub fn reference_value(&self, model: &EventModel) -> f64 {
        let (s, i) = self.reference;
        self.greedy(model, s, i).1
    }

    /// One relative Q-learning update with an explicit step size.
    #[allow(clippy::too_many_arguments)]
    pub fn update_with_step(
        &mut self,
        model: &EventModel,
        s: State,
        event: Event,
        action: ActionKind,
        reward: f64,
        next: State,
        next_event: Event,
        step: f64,
    ) {
        let target = reward - self.reference_value(model) + self.greedy(model, next, next_event).1;
        let idx = self.index(model, s, event, action);
        self.values[idx] += step * (target - self.values[idx]);
    }

    /// Update with the step indexed by the triple's visit count.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        model: &EventModel,
        schedule: &StepSchedule,
        s: State,
        event: Event,
        action: ActionKind,
        reward: f64,
        next: State,
        next_event: Event,
    ) {
        let idx = self.index(model, s, event, action);
        self.visits[idx] += 1;
        let step = schedule.fast(self.visits[idx]);
        self.update_with_step(model, s, event, action, reward, next, next_event, step);
    }

    /// Whether the greedy policy admits class `class` in state `s`.
    pub fn admits(&self, model: &EventModel, s: State, class: usize) -> bool {
        let event = model.controlled_events()[class];
        model.rate(s, event) > 0.0 && self.greedy(model, s, event).0 == ActionKind::Admit
    }
}

/// First state at which the greedy rule blocks class `k`, or `W`.
pub fn first_block(model: &EventModel, admits: impl Fn(State, usize) -> bool) -> Vec<usize> {
    (0..model.num_classes())
        .map(|k| (0..model.max_state()).find(|&s| !admits(s, k)).unwrap_or(model.max_state()))
        .collect()
}

/// RVI Q-learning bound to one model and one seed.
#[derive(Clone, Debug)]
pub struct QLearner<'m> {
    model: &'m EventModel,
    config: BaselineConfig,
    table: QTable,
    progress: Progress,
    state: State,
    pending_event: Event,
    streams: Streams,
}

impl<'m> QLearner<'m> {
    pub fn new(model: &'m EventModel, config: BaselineConfig, seed: u64) -> Self {
        let mut streams = Streams::new(seed);
        let pending_event = draw_event(model, 0, &mut streams.env);
        Self {
            model,
            table: QTable::new(model),
            progress: Progress::new(config.estimator),
            config,
            state: 0,
            pending_event,
            streams,
        }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn run(&mut self, iterations: u64) {
        for _ in 0..iterations {
            self.step();
        }
    }

    fn choose(&mut self, s: State, event: Event) -> ActionKind {
        let feasible = actions(self.model, s, event);
        if feasible.len() > 1 && self.streams.explore.random::<f64>() < self.config.epsilon {
            feasible[self.streams.explore.random_range(0..feasible.len())]
        } else {
            self.table.greedy(self.model, s, event).0
        }
    }
}

impl OnlineLearner for QLearner<'_> {
    fn step(&mut self) -> StepReport {
        let model = self.model;
        let s = self.state;
        let event = self.pending_event;
        let action = self.choose(s, event);
        let next = model.next_state(s, action);
        let reward = model.reward_unchecked(s, event, action);
        let next_event = draw_event(model, next, &mut self.streams.env);
        self.table.update(model, &self.config.schedule, s, event, action, reward, next, next_event);
        self.progress.advance(&self.config.schedule, reward);
        self.state = next;
        self.pending_event = next_event;
        StepReport { state: s, event, action, next_state: next, reward, writes: WriteCounts { values: 1, thresholds: 0 } }
    }

    fn progress(&self) -> &Progress {
        &self.progress
    }

    fn current_state(&self) -> State {
        self.state
    }

    fn record(&self) -> TraceRecord {
        TraceRecord {
            n: self.progress.n,
            cum_a: self.progress.cum_a(),
            rho_hat: self.progress.rho_hat,
            thresholds: None,
            greedy: Some(self.policy_thresholds()),
            state: self.state,
        }
    }

    fn policy_thresholds(&self) -> Vec<usize> {
        first_block(self.model, |s, k| self.table.admits(self.model, s, k))
    }

    fn evaluate_policy(&self) -> Result<PolicyEvaluation, SolverError> {
        evaluate_admission_rule(self.model, |s, k| self.table.admits(self.model, s, k))
    }

    fn storage(&self) -> usize {
        self.table.len()
    }
}

/// Greedy lookahead on a state-value table: admit iff `R_i + V(s+1) > V(s)`.
pub fn pds_greedy(model: &EventModel, values: &[f64], s: State, event: Event) -> ActionKind {
    match model.class_of(event) {
        None => ActionKind::Continue,
        Some(_) if s >= model.max_state() => ActionKind::Block,
        Some(_) => {
            if model.reward(event) + values[s + 1] > values[s] {
                ActionKind::Admit
            } else {
                ActionKind::Block
            }
        }
    }
}

/// Post-decision-state learning. The state reached after an action is the
/// state the next event finds, so one table indexed by state serves both the
/// lookahead and the update.
#[derive(Clone, Debug)]
pub struct PdsLearner<'m> {
    model: &'m EventModel,
    config: BaselineConfig,
    values: Vec<f64>,
    visits: Vec<u64>,
    progress: Progress,
    state: State,
    streams: Streams,
}

impl<'m> PdsLearner<'m> {
    pub fn new(model: &'m EventModel, config: BaselineConfig, seed: u64) -> Self {
        Self {
            model,
            values: vec![0.0; model.num_states()],
            visits: vec![0; model.num_states()],
            progress: Progress::new(config.estimator),
            config,
            state: 0,
            streams: Streams::new(seed),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn run(&mut self, iterations: u64) {
        for _ in 0..iterations {
            self.step();
        }
    }

    fn admits(&self, s: State, class: usize) -> bool {
        let event = self.model.controlled_events()[class];
        pds_greedy(self.model, &self.values, s, event) == ActionKind::Admit
    }
}

impl OnlineLearner for PdsLearner<'_> {
    fn step(&mut self) -> StepReport {
        let model = self.model;
        let s = self.state;
        let event = draw_event(model, s, &mut self.streams.env);
        let action = pds_greedy(model, &self.values, s, event);
        let next = model.next_state(s, action);
        let reward = model.reward_unchecked(s, event, action);
        self.visits[s] += 1;
        let a = self.config.schedule.fast(self.visits[s]);
        let target = reward + self.values[next] - self.values[model.reference_state()];
        self.values[s] = (1.0 - a) * self.values[s] + a * target;
        self.progress.advance(&self.config.schedule, reward);
        self.state = next;
        StepReport { state: s, event, action, next_state: next, reward, writes: WriteCounts { values: 1, thresholds: 0 } }
    }

    fn progress(&self) -> &Progress {
        &self.progress
    }

    fn current_state(&self) -> State {
        self.state
    }

    fn record(&self) -> TraceRecord {
        TraceRecord {
            n: self.progress.n,
            cum_a: self.progress.cum_a(),
            rho_hat: self.progress.rho_hat,
            thresholds: None,
            greedy: Some(self.policy_thresholds()),
            state: self.state,
        }
    }

    fn policy_thresholds(&self) -> Vec<usize> {
        first_block(self.model, |s, k| self.admits(s, k))
    }

    fn evaluate_policy(&self) -> Result<PolicyEvaluation, SolverError> {
        evaluate_admission_rule(self.model, |s, k| self.admits(s, k))
    }

    fn storage(&self) -> usize {
        self.values.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benchmark_queue;
    use approx::assert_abs_diff_eq;

    #[test]
    fn q_update_example() {
        let model = benchmark_queue(4.0);
        let mut table = QTable::new(&model);
        let r = model.lump_reward(3, 1, ActionKind::Admit).unwrap();
        table.update_with_step(&model, 3, 1, ActionKind::Admit, r, 4, 0, 0.5);
        assert_abs_diff_eq!(table.get(&model, 3, 1, ActionKind::Admit), 9.55, epsilon = 1e-12);
        let nonzero = table.values.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let model = benchmark_queue(4.0);
        let table = QTable::new(&model);
        assert_eq!(table.greedy(&model, 2, 1).0, ActionKind::Block);
        assert_eq!(table.greedy(&model, 2, 0).0, ActionKind::Continue);
    }

    #[test]
    fn storage_counts() {
        let model = benchmark_queue(4.0);
        let q = QLearner::new(&model, BaselineConfig::default(), 1);
        let p = PdsLearner::new(&model, BaselineConfig::default(), 1);
        assert_eq!(q.storage(), model.feasible_triples());
        assert_eq!(q.storage(), 52);
        assert_eq!(p.storage(), 11);
        assert!(q.storage() > model.num_states() + model.num_classes());
    }

    #[test]
    fn pds_lookahead() {
        let model = benchmark_queue(4.0);
        let zeros = vec![0.0; 11];
        for s in 0..10 {
            assert_eq!(pds_greedy(&model, &zeros, s, 1), ActionKind::Admit);
            assert_eq!(pds_greedy(&model, &zeros, s, 2), ActionKind::Admit);
        }
        assert_eq!(pds_greedy(&model, &zeros, 10, 1), ActionKind::Block);
        let mut v = zeros.clone();
        v[4] = -15.0;
        // 10 − 15 < 0 blocks class 2, 20 − 15 > 0 admits class 1
        assert_eq!(pds_greedy(&model, &v, 3, 2), ActionKind::Block);
        assert_eq!(pds_greedy(&model, &v, 3, 1), ActionKind::Admit);
        v[4] = -20.0;
        // equality blocks
        assert_eq!(pds_greedy(&model, &v, 3, 1), ActionKind::Block);
    }

    #[test]
    fn baselines_share_the_event_path_with_salmut() {
        use crate::learner::{Salmut, SalmutConfig};
        let model = benchmark_queue(4.0);
        let mut sal = Salmut::new(&model, SalmutConfig::default(), 5).unwrap();
        let mut pds = PdsLearner::new(&model, BaselineConfig::default(), 5);
        let mut q = QLearner::new(&model, BaselineConfig::default(), 5);
        // the first event comes from the same uniform in every learner
        let a = sal.step();
        let b = pds.step();
        let c = q.step();
        assert_eq!(a.event, b.event);
        assert_eq!(a.event, c.event);
    }

    #[test]
    fn writes_and_greedy_record() {
        let model = benchmark_queue(2.0);
        let mut q = QLearner::new(&model, BaselineConfig::default(), 9);
        for _ in 0..1000 {
            assert_eq!(q.step().writes, WriteCounts { values: 1, thresholds: 0 });
        }
        let rec = q.record();
        assert!(rec.thresholds.is_none());
        assert_eq!(rec.greedy.as_ref().unwrap().len(), 2);
        assert!(q.evaluate_policy().is_ok());
    }
}
