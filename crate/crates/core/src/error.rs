use thiserror::Error;

use crate::model::{ActionKind, Event, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state {state} outside 0..={max_state}")]
    InvalidState { state: State, max_state: State },
    #[error("event {event} outside 0..{num_events}")]
    InvalidEvent { event: Event, num_events: usize },
    #[error("rate for (state {state}, event {event}) is {value}; rates must be finite and non-negative")]
    InvalidRate { state: State, event: Event, value: f64 },
    #[error("total event rate in state {state} is zero")]
    ZeroTotalRate { state: State },
    #[error("reward of event {event} is {value}; rewards must be finite and non-negative")]
    InvalidReward { event: Event, value: f64 },
    #[error("cost in state {state} is {value}; costs must be finite and non-negative")]
    InvalidCost { state: State, value: f64 },
    #[error("controlled event {second} has a larger reward than event {first}")]
    RewardOrder { first: Event, second: Event },
    #[error("action {action:?} is not feasible for event {event} in state {state}")]
    InfeasibleAction { state: State, event: Event, action: ActionKind },
    #[error("event {event} is not controlled")]
    Uncontrolled { event: Event },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("threshold {index} = {value} outside [0, {max_state}]")]
    OutOfRange { index: usize, value: f64, max_state: f64 },
    #[error("thresholds not ordered: τ({index}) = {prev} < τ({next_index}) = {next}", next_index = index + 1)]
    Unordered { index: usize, prev: f64, next: f64 },
    #[error("expected {expected} thresholds, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("relative value iteration did not converge in {iterations} sweeps (span {span:e})")]
    NotConverged { iterations: usize, span: f64 },
    #[error("singular balance equations: the chain is not unichain or is numerically degenerate")]
    Singular,
    #[error("stationary solve residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("kernel row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}
