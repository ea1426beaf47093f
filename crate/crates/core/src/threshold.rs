//! Ordered threshold vectors, the threshold decision rule, its sigmoid
//! relaxation and the per-component projections that keep the vector ordered.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ThresholdError};
use crate::model::{ActionKind, Event, EventModel, State};

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability of the stay/block rule in state `s` for threshold `t`.
#[inline]
pub fn smooth_prob(s: f64, t: f64) -> f64 {
    logistic(s - t - 0.5)
}

/// Derivative of [`smooth_prob`] with respect to the threshold.
#[inline]
pub fn smooth_prob_grad(s: f64, t: f64) -> f64 {
    let f = smooth_prob(s, t);
    -f * (1.0 - f)
}

/// Thresholds `τ(1) ≥ … ≥ τ(N)` in `[0, W]`, most rewarding class first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    values: Vec<f64>,
    upper: f64,
}

impl ThresholdVector {
    pub fn new(values: Vec<f64>, max_state: State) -> Result<Self, ThresholdError> {
        let upper = max_state as f64;
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=upper).contains(&value) {
                return Err(ThresholdError::OutOfRange { index, value, max_state: upper });
            }
        }
        for (index, w) in values.windows(2).enumerate() {
            if w[0] < w[1] {
                return Err(ThresholdError::Unordered { index, prev: w[0], next: w[1] });
            }
        }
        Ok(Self { values, upper })
    }

    /// Checked constructor that also matches the model's class count.
    pub fn for_model(model: &EventModel, values: Vec<f64>) -> Result<Self, ThresholdError> {
        if values.len() != model.num_classes() {
            return Err(ThresholdError::Length { expected: model.num_classes(), got: values.len() });
        }
        Self::new(values, model.max_state())
    }

    pub fn from_integers(values: &[usize], max_state: State) -> Result<Self, ThresholdError> {
        Self::new(values.iter().map(|&v| v as f64).collect(), max_state)
    }

    pub fn zeros(len: usize, max_state: State) -> Self {
        Self { values: vec![0.0; len], upper: max_state as f64 }
    }

    pub fn filled(len: usize, value: f64, max_state: State) -> Result<Self, ThresholdError> {
        Self::new(vec![value; len], max_state)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, class: usize) -> f64 {
        self.values[class]
    }

    pub fn max_state(&self) -> f64 {
        self.upper
    }

    /// Admit iff `s < τ(class)` and `s < W`.
    #[inline]
    pub fn select_action(&self, s: State, class: usize) -> ActionKind {
        let sf = s as f64;
        if sf < self.values[class] && sf < self.upper {
            ActionKind::Admit
        } else {
            ActionKind::Block
        }
    }

    /// Clamp of `x` into the interval allowed for component `class`: `[0, W]`
    /// for the first component, `[0, τ(class − 1)]` otherwise.
    pub fn project(&self, class: usize, x: f64) -> f64 {
        let hi = if class == 0 { self.upper } else { self.values[class - 1] };
        x.clamp(0.0, hi)
    }

    /// Writes the projection of `x` into component `class`, then re-projects
    /// every later component against its (already updated) predecessor.
    /// Returns the number of components written.
    pub fn set_projected(&mut self, class: usize, x: f64) -> usize {
        self.values[class] = self.project(class, x);
        self.cascade_from(class + 1);
        self.values.len() - class
    }

    fn cascade_from(&mut self, start: usize) {
        for j in start.max(1)..self.values.len() {
            self.values[j] = self.values[j].clamp(0.0, self.values[j - 1]);
        }
    }

    /// Nearest-integer thresholds, a half rounding up.
    pub fn rounded(&self) -> Vec<usize> {
        self.values.iter().map(|&t| (t + 0.5).floor().clamp(0.0, self.upper) as usize).collect()
    }

    /// Shifts every component by `delta` without clamping.
    pub fn shifted_unclamped(&self, delta: f64) -> Vec<f64> {
        self.values.iter().map(|t| t + delta).collect()
    }
}

/// Transition matrix and expected one-step reward of the randomized policy
/// that admits a controlled event `e` in state `s` with probability
/// `admit(s, class)`. Admission is suppressed at `W`.
pub fn admission_chain<F>(model: &EventModel, admit: F) -> (DMatrix<f64>, DVector<f64>)
where
    F: Fn(State, usize) -> f64,
{
    let n = model.num_states();
    let w = model.max_state();
    let mut kernel = DMatrix::zeros(n, n);
    let mut reward = DVector::zeros(n);
    for s in 0..n {
        let mut g = -model.cost(s);
        for (event, &p) in model.event_probs(s).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            match model.class_of(event) {
                None => kernel[(s, s.saturating_sub(1))] += p,
                Some(class) => {
                    let q = if s < w { admit(s, class) } else { 0.0 };
                    kernel[(s, s)] += p * (1.0 - q);
                    if q > 0.0 {
                        kernel[(s, s + 1)] += p * q;
                        g += p * q * model.reward(event);
                    }
                }
            }
        }
        reward[s] = g;
    }
    (kernel, reward)
}

/// Kernel of the sigmoid-randomized threshold policy.
pub fn smoothed_kernel(model: &EventModel, tau: &ThresholdVector) -> DMatrix<f64> {
    admission_chain(model, |s, k| 1.0 - smooth_prob(s as f64, tau.get(k))).0
}

/// Kernel of the deterministic threshold policy.
pub fn hard_kernel(model: &EventModel, tau: &ThresholdVector) -> DMatrix<f64> {
    admission_chain(model, |s, k| if tau.select_action(s, k) == ActionKind::Admit { 1.0 } else { 0.0 }).0
}

/// Event-averaged smoothed one-step reward `Σ_i p_i(s)(1 − f(s, τ(i)))R_i − h(s)`.
pub fn smoothed_reward(model: &EventModel, tau: &ThresholdVector, s: State) -> Result<f64, ModelError> {
    if s > model.max_state() {
        return Err(ModelError::InvalidState { state: s, max_state: model.max_state() });
    }
    let mut g = -model.cost(s);
    if s < model.max_state() {
        for &event in model.controlled_events() {
            let k = model.class_of(event).expect("controlled event has a class");
            g += model.event_prob(s, event) * (1.0 - smooth_prob(s as f64, tau.get(k))) * model.reward(event);
        }
    }
    Ok(g)
}

/// Action for `event` in state `s` under `tau`, including forced actions.
pub fn policy_action(model: &EventModel, tau: &ThresholdVector, s: State, event: Event) -> ActionKind {
    match model.class_of(event) {
        None => ActionKind::Continue,
        Some(k) => tau.select_action(s, k),
    }
}

/// Checked variant of [`ThresholdVector::select_action`] keyed by event.
pub fn select_action(model: &EventModel, tau: &ThresholdVector, s: State, event: Event) -> Result<ActionKind, ModelError> {
    if s > model.max_state() {
        return Err(ModelError::InvalidState { state: s, max_state: model.max_state() });
    }
    match model.class_of(event) {
        None => Err(ModelError::Uncontrolled { event }),
        Some(k) => Ok(tau.select_action(s, k)),
    }
}
