//! Event-driven finite-state MDP and the multi-server admission-control queue.
//!
//! States are `0..=W`. In state `s` the next event `i` fires with probability
//! `rate(s, i) / total_rate(s)`. Controlled events (arrivals) admit a choice
//! between [`ActionKind::Block`] (stay) and [`ActionKind::Admit`] (move to
//! `s + 1`); uncontrolled events (service completions) move to `(s - 1)⁺`.
//! The learner and the exact solver both work on this embedded jump chain with
//! per-transition lump rewards.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub type State = usize;
pub type Event = usize;

/// Action taken when an event fires.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    /// Only action for uncontrolled events.
    Continue,
    Block,
    Admit,
}

/// Immutable event model. Rates and costs are supplied as closures and
/// tabulated once at construction.
#[derive(Clone, Debug)]
pub struct EventModel {
    max_state: State,
    num_events: usize,
    rewards: Vec<f64>,
    controlled: Vec<bool>,
    reference_state: State,
    // row-major (state, event)
    rates: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    totals: Vec<f64>,
    costs: Vec<f64>,
    controlled_events: Vec<Event>,
    class_of: Vec<Option<usize>>,
}

impl EventModel {
    /// Builds a model over states `0..=max_state`.
    ///
    /// Rewards of controlled events must be non-increasing in event index;
    /// the strict ordering the structural results rely on is reported by
    /// [`EventModel::has_strict_reward_order`].
    pub fn new<R, H>(
        max_state: State,
        rewards: Vec<f64>,
        controlled: Vec<bool>,
        rate: R,
        cost: H,
        reference_state: State,
    ) -> Result<Self, ModelError>
    where
        R: Fn(State, Event) -> f64,
        H: Fn(State) -> f64,
    {
        let num_events = rewards.len();
        if num_events == 0 || controlled.len() != num_events {
            return Err(ModelError::Shape(format!(
                "{} rewards but {} controlled flags",
                num_events,
                controlled.len()
            )));
        }
        if reference_state > max_state {
            return Err(ModelError::InvalidState { state: reference_state, max_state });
        }
        for (i, &r) in rewards.iter().enumerate() {
            if !(r.is_finite() && r >= 0.0) {
                return Err(ModelError::InvalidReward { event: i, value: r });
            }
        }
        let controlled_events: Vec<Event> = (0..num_events).filter(|&i| controlled[i]).collect();
        for pair in controlled_events.windows(2) {
            if rewards[pair[0]] < rewards[pair[1]] {
                return Err(ModelError::RewardOrder { first: pair[0], second: pair[1] });
            }
        }
        let mut class_of = vec![None; num_events];
        for (k, &e) in controlled_events.iter().enumerate() {
            class_of[e] = Some(k);
        }

        let n = max_state + 1;
        let mut rates = Vec::with_capacity(n * num_events);
        let mut totals = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        for s in 0..n {
            let mut total = 0.0;
            for i in 0..num_events {
                let r = rate(s, i);
                if !(r.is_finite() && r >= 0.0) {
                    return Err(ModelError::InvalidRate { state: s, event: i, value: r });
                }
                rates.push(r);
                total += r;
            }
            if total <= 0.0 {
                return Err(ModelError::ZeroTotalRate { state: s });
            }
            totals.push(total);
            let h = cost(s);
            if !(h.is_finite() && h >= 0.0) {
                return Err(ModelError::InvalidCost { state: s, value: h });
            }
            costs.push(h);
        }
        let mut probs = Vec::with_capacity(n * num_events);
        let mut cumulative = Vec::with_capacity(n * num_events);
        for s in 0..n {
            let mut acc = 0.0;
            for i in 0..num_events {
                let p = rates[s * num_events + i] / totals[s];
                acc += p;
                probs.push(p);
                cumulative.push(acc);
            }
        }

        Ok(Self {
            max_state,
            num_events,
            rewards,
            controlled,
            reference_state,
            rates,
            probs,
            cumulative,
            totals,
            costs,
            controlled_events,
            class_of,
        })
    }

    /// `W`, the largest state.
    pub fn max_state(&self) -> State {
        self.max_state
    }

    pub fn num_states(&self) -> usize {
        self.max_state + 1
    }

    pub fn num_events(&self) -> usize {
        self.num_events
    }

    /// Number of controlled events, i.e. the length of a threshold vector.
    pub fn num_classes(&self) -> usize {
        self.controlled_events.len()
    }

    pub fn reference_state(&self) -> State {
        self.reference_state
    }

    pub fn reward(&self, event: Event) -> f64 {
        self.rewards[event]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn is_controlled(&self, event: Event) -> bool {
        self.controlled[event]
    }

    /// Controlled events in threshold order (most rewarding first).
    pub fn controlled_events(&self) -> &[Event] {
        &self.controlled_events
    }

    /// Threshold index of a controlled event.
    pub fn class_of(&self, event: Event) -> Option<usize> {
        self.class_of[event]
    }

    /// Reward of the `class`-th controlled event.
    pub fn class_reward(&self, class: usize) -> f64 {
        self.rewards[self.controlled_events[class]]
    }

    pub fn cost(&self, s: State) -> f64 {
        self.costs[s]
    }

    pub fn rate(&self, s: State, event: Event) -> f64 {
        self.rates[s * self.num_events + event]
    }

    /// Event probability without bounds checking beyond slice indexing.
    #[inline]
    pub fn event_prob(&self, s: State, event: Event) -> f64 {
        self.probs[s * self.num_events + event]
    }

    /// Event probabilities in state `s` as a slice.
    #[inline]
    pub fn event_probs(&self, s: State) -> &[f64] {
        &self.probs[s * self.num_events..(s + 1) * self.num_events]
    }

    /// Inverse-CDF event draw from a uniform `u ∈ [0, 1)`.
    #[inline]
    pub fn sample_event(&self, s: State, u: f64) -> Event {
        let row = &self.cumulative[s * self.num_events..(s + 1) * self.num_events];
        row.iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| {
                // rounding at the top of the CDF: last event with positive probability
                (0..self.num_events).rev().find(|&i| self.rate(s, i) > 0.0).unwrap_or(0)
            })
    }

    fn check_state(&self, s: State) -> Result<(), ModelError> {
        if s > self.max_state {
            Err(ModelError::InvalidState { state: s, max_state: self.max_state })
        } else {
            Ok(())
        }
    }

    fn check_event(&self, event: Event) -> Result<(), ModelError> {
        if event >= self.num_events {
            Err(ModelError::InvalidEvent { event, num_events: self.num_events })
        } else {
            Ok(())
        }
    }

    /// `v(s) = Σ_i λ_i(s)`.
    pub fn total_rate(&self, s: State) -> Result<f64, ModelError> {
        self.check_state(s)?;
        Ok(self.totals[s])
    }

    /// Probability of each event in state `s`.
    pub fn event_distribution(&self, s: State) -> Result<Vec<f64>, ModelError> {
        self.check_state(s)?;
        Ok(self.event_probs(s).to_vec())
    }

    /// Whether `action` is admissible for `event` in state `s`.
    pub fn is_feasible(&self, s: State, event: Event, action: ActionKind) -> bool {
        match (self.controlled[event], action) {
            (false, ActionKind::Continue) => true,
            (true, ActionKind::Block) => true,
            (true, ActionKind::Admit) => s < self.max_state,
            _ => false,
        }
    }

    /// Deterministic post-action state.
    pub fn apply_action(&self, s: State, event: Event, action: ActionKind) -> Result<State, ModelError> {
        self.check_state(s)?;
        self.check_event(event)?;
        if !self.is_feasible(s, event, action) {
            return Err(ModelError::InfeasibleAction { state: s, event, action });
        }
        Ok(self.next_state(s, action))
    }

    /// Unchecked transition; the caller guarantees feasibility.
    #[inline]
    pub fn next_state(&self, s: State, action: ActionKind) -> State {
        match action {
            ActionKind::Admit => s + 1,
            ActionKind::Block => s,
            ActionKind::Continue => s.saturating_sub(1),
        }
    }

    /// `R_i·1{a = Admit} − h(s)`.
    pub fn lump_reward(&self, s: State, event: Event, action: ActionKind) -> Result<f64, ModelError> {
        self.check_state(s)?;
        self.check_event(event)?;
        if !self.is_feasible(s, event, action) {
            return Err(ModelError::InfeasibleAction { state: s, event, action });
        }
        Ok(self.reward_unchecked(s, event, action))
    }

    #[inline]
    pub fn reward_unchecked(&self, s: State, event: Event, action: ActionKind) -> f64 {
        let base = if action == ActionKind::Admit { self.rewards[event] } else { 0.0 };
        base - self.costs[s]
    }

    /// Rewards of controlled events strictly decrease with event index.
    pub fn has_strict_reward_order(&self) -> bool {
        self.controlled_events
            .windows(2)
            .all(|w| self.rewards[w[0]] > self.rewards[w[1]])
    }

    /// `h(s+1) − h(s)` is strictly increasing in `s`.
    pub fn has_strictly_convex_cost(&self) -> bool {
        self.costs
            .windows(3)
            .all(|w| w[2] - w[1] > w[1] - w[0])
    }

    /// Number of `(state, event, action)` triples with positive event rate and
    /// a feasible action. This is the storage of a tabular Q-function.
    pub fn feasible_triples(&self) -> usize {
        let mut count = 0;
        for s in 0..self.num_states() {
            for i in 0..self.num_events {
                if self.rate(s, i) <= 0.0 {
                    continue;
                }
                count += [ActionKind::Continue, ActionKind::Block, ActionKind::Admit]
                    .iter()
                    .filter(|&&a| self.is_feasible(s, i, a))
                    .count();
            }
        }
        count
    }
}

/// Polynomial holding cost `c·s^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialCost {
    pub c: f64,
    pub p: f64,
}

impl PolynomialCost {
    pub fn eval(&self, s: State) -> f64 {
        if s == 0 {
            // 0^0 would be 1; keep h(0) = c only for p == 0
            return if self.p == 0.0 { self.c } else { 0.0 };
        }
        self.c * (s as f64).powf(self.p)
    }
}

impl Default for PolynomialCost {
    fn default() -> Self {
        Self { c: 0.1, p: 2.0 }
    }
}

/// `m` identical servers, a buffer of `B` places and `N` Poisson arrival classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub servers: usize,
    pub buffer: usize,
    pub service_rate: f64,
    pub arrival_rates: Vec<f64>,
}

impl QueueParams {
    pub fn max_state(&self) -> State {
        self.servers + self.buffer
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.servers == 0 || self.buffer == 0 {
            return Err(ModelError::Shape("servers and buffer must be at least 1".into()));
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return Err(ModelError::Shape(format!("service rate {} must be positive", self.service_rate)));
        }
        if self.arrival_rates.is_empty() || self.arrival_rates.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(ModelError::Shape("arrival rates must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the queue model: event 0 is a departure at rate `min(s, m)·μ`,
/// event `i ≥ 1` is a class-`i` arrival at rate `λ_i`. `rewards[k]` is the
/// reward of class `k + 1`. The reference state is 0.
pub fn queue_model<H>(params: &QueueParams, rewards: &[f64], cost: H) -> Result<EventModel, ModelError>
where
    H: Fn(State) -> f64,
{
    params.validate()?;
    if rewards.len() != params.arrival_rates.len() {
        return Err(ModelError::Shape(format!(
            "{} arrival classes but {} rewards",
            params.arrival_rates.len(),
            rewards.len()
        )));
    }
    let m = params.servers;
    let mu = params.service_rate;
    let lambdas = params.arrival_rates.clone();
    let mut all_rewards = Vec::with_capacity(rewards.len() + 1);
    all_rewards.push(0.0);
    all_rewards.extend_from_slice(rewards);
    let mut controlled = vec![true; rewards.len() + 1];
    controlled[0] = false;
    EventModel::new(
        params.max_state(),
        all_rewards,
        controlled,
        move |s, i| if i == 0 { s.min(m) as f64 * mu } else { lambdas[i - 1] },
        cost,
        0,
    )
}

/// Queue model with a polynomial cost.
pub fn polynomial_queue(params: &QueueParams, rewards: &[f64], cost: PolynomialCost) -> Result<EventModel, ModelError> {
    queue_model(params, rewards, move |s| cost.eval(s))
}

/// The two-class, five-server, five-place benchmark instance with the given service rate.
pub fn benchmark_queue(service_rate: f64) -> EventModel {
    let params = QueueParams {
        servers: 5,
        buffer: 5,
        service_rate,
        arrival_rates: vec![1.0, 1.0],
    };
    polynomial_queue(&params, &[20.0, 10.0], PolynomialCost::default()).expect("benchmark parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn q4() -> EventModel {
        benchmark_queue(4.0)
    }

    #[test]
    fn total_rate_examples() {
        let m = q4();
        assert_eq!(m.total_rate(3).unwrap(), 14.0);
        assert_eq!(m.total_rate(0).unwrap(), 2.0);
        assert_eq!(m.total_rate(7).unwrap(), 22.0);
        assert!(matches!(m.total_rate(11), Err(ModelError::InvalidState { .. })));
    }

    #[test]
    fn event_distribution_examples() {
        let m = q4();
        let p = m.event_distribution(3).unwrap();
        assert_abs_diff_eq!(p[0], 12.0 / 14.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 14.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 1.0 / 14.0, epsilon = 1e-15);
        assert_eq!(m.event_distribution(0).unwrap(), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn zero_total_rate_is_rejected() {
        let err = EventModel::new(2, vec![0.0, 1.0], vec![false, true], |s, i| if s == 1 { 0.0 } else { i as f64 }, |_| 0.0, 0)
            .unwrap_err();
        assert!(matches!(err, ModelError::ZeroTotalRate { state: 1 }));
    }

    #[test]
    fn reward_order_is_enforced() {
        let params = QueueParams { servers: 1, buffer: 1, service_rate: 1.0, arrival_rates: vec![1.0, 1.0] };
        assert!(matches!(
            polynomial_queue(&params, &[5.0, 10.0], PolynomialCost::default()),
            Err(ModelError::RewardOrder { .. })
        ));
    }

    #[test]
    fn apply_action_examples() {
        let m = q4();
        assert_eq!(m.apply_action(3, 1, ActionKind::Admit).unwrap(), 4);
        assert_eq!(m.apply_action(0, 0, ActionKind::Continue).unwrap(), 0);
        assert_eq!(m.apply_action(10, 2, ActionKind::Block).unwrap(), 10);
        assert!(matches!(m.apply_action(10, 1, ActionKind::Admit), Err(ModelError::InfeasibleAction { .. })));
        assert!(m.apply_action(3, 0, ActionKind::Admit).is_err());
        assert!(m.apply_action(3, 1, ActionKind::Continue).is_err());
    }

    #[test]
    fn lump_reward_examples() {
        let m = q4();
        assert_abs_diff_eq!(m.lump_reward(3, 1, ActionKind::Admit).unwrap(), 19.1, epsilon = 1e-12);
        assert_eq!(m.lump_reward(0, 2, ActionKind::Block).unwrap(), 0.0);
        assert_abs_diff_eq!(m.lump_reward(5, 0, ActionKind::Continue).unwrap(), -2.5, epsilon = 1e-12);
    }

    #[test]
    fn benchmark_structure() {
        let m = q4();
        assert_eq!(m.max_state(), 10);
        assert_eq!(m.num_classes(), 2);
        assert!(m.has_strict_reward_order());
        assert!(m.has_strictly_convex_cost());
        // 10 states × 2 classes × 2 actions + 2 forced blocks at W + 10 departures
        assert_eq!(m.feasible_triples(), 52);
    }

    proptest! {
        #[test]
        fn distributions_are_normalised(mu in 0.1f64..10.0, l1 in 0.1f64..5.0, l2 in 0.1f64..5.0, s in 0usize..11) {
            let params = QueueParams { servers: 5, buffer: 5, service_rate: mu, arrival_rates: vec![l1, l2] };
            let m = polynomial_queue(&params, &[20.0, 10.0], PolynomialCost::default()).unwrap();
            let p = m.event_distribution(s).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn transitions_stay_in_range(s in 0usize..11, event in 0usize..3, admit in any::<bool>()) {
            let m = q4();
            let action = if event == 0 { ActionKind::Continue } else if admit && s < 10 { ActionKind::Admit } else { ActionKind::Block };
            let next = m.apply_action(s, event, action).unwrap();
            prop_assert!(next <= m.max_state());
        }

        #[test]
        fn rewards_respect_ordering_and_cost(s in 0usize..10) {
            let m = q4();
            let r1 = m.lump_reward(s, 1, ActionKind::Admit).unwrap();
            let r2 = m.lump_reward(s, 2, ActionKind::Admit).unwrap();
            prop_assert!(r1 > r2);
            let next = m.lump_reward(s + 1, 1, ActionKind::Block).unwrap();
            prop_assert!(next <= m.lump_reward(s, 1, ActionKind::Block).unwrap());
        }
    }
}
