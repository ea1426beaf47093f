//! Ordered multi-threshold admission control: the event model, exact
//! dynamic-programming oracles, the two-timescale SALMUT learner, tabular
//! baselines and an experiment harness.

pub mod baselines;
pub mod error;
pub mod exact;
pub mod harness;
pub mod model;
pub mod parallel;
pub mod learner;
pub mod sim;
pub mod threshold;

pub use baselines::{BaselineConfig, PdsLearner, QLearner, QTable};
pub use error::{HarnessError, ModelError, SolverError, ThresholdError};
pub use exact::{
    average_reward_sigma, brute_force_optimal_tau, gradient_sigma, rvia_solve, PolicyEvaluation, RviaOptions,
    RviaSolution,
};
pub use model::{benchmark_queue, ActionKind, EventModel, PolynomialCost, QueueParams};
pub use parallel::Execution;
pub use learner::{Salmut, SalmutConfig};
pub use sim::{OnlineLearner, StepSchedule, TraceRecord};
pub use threshold::ThresholdVector;
