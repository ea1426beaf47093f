//! Seeded experiment runs, trace files, the window stopping rule and
//! multi-seed summaries.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, PdsLearner, QLearner};
use crate::error::{HarnessError, ModelError, SolverError};
use crate::exact::{finite_difference_gradient, gradient_sigma, rvia_solve, RviaOptions, ScanRow};
use crate::learner::{Salmut, SalmutConfig};
use crate::model::{polynomial_queue, EventModel, PolynomialCost, QueueParams};
use crate::parallel::{self, Execution};
use crate::sim::{AverageRewardEstimator, OnlineLearner, StepSchedule, TraceRecord};
use crate::threshold::ThresholdVector;

/// Queue parameters as they appear in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    #[serde(rename = "B")]
    pub buffer: usize,
    pub mu: f64,
    pub lambda: Vec<f64>,
    #[serde(rename = "R")]
    pub rewards: Vec<f64>,
    pub cost: PolynomialCost,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { m: 5, buffer: 5, mu: 4.0, lambda: vec![1.0, 1.0], rewards: vec![20.0, 10.0], cost: PolynomialCost::default() }
    }
}

impl ModelConfig {
    pub fn with_mu(mu: f64) -> Self {
        Self { mu, ..Self::default() }
    }

    pub fn build(&self) -> Result<EventModel, ModelError> {
        let params = QueueParams {
            servers: self.m,
            buffer: self.buffer,
            service_rate: self.mu,
            arrival_rates: self.lambda.clone(),
        };
        polynomial_queue(&params, &self.rewards, self.cost)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Salmut,
    Qlearning,
    Pds,
    All,
}

impl Algorithm {
    pub const LEARNERS: [Algorithm; 3] = [Algorithm::Salmut, Algorithm::Pds, Algorithm::Qlearning];

    pub fn expand(self) -> Vec<Algorithm> {
        match self {
            Algorithm::All => Self::LEARNERS.to_vec(),
            a => vec![a],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Salmut => "salmut",
            Algorithm::Qlearning => "qlearning",
            Algorithm::Pds => "pds",
            Algorithm::All => "all",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "salmut" => Ok(Algorithm::Salmut),
            "qlearning" | "q" => Ok(Algorithm::Qlearning),
            "pds" => Ok(Algorithm::Pds),
            "all" => Ok(Algorithm::All),
            other => Err(HarnessError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Unit of the stopping-rule window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Span of cumulative faster step size.
    #[default]
    CumA,
    /// Number of trace records.
    Records,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub seeds: Vec<u64>,
    pub max_iterations: u64,
    pub stride: u64,
    pub window: f64,
    pub window_mode: WindowMode,
    pub ratio: f64,
    pub burn_in: usize,
    pub include_g_term: bool,
    pub epsilon: f64,
    /// Defaults to the post-burn-in mean matching `burn_in · stride`.
    pub estimator: Option<AverageRewardEstimator>,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            algorithm: Algorithm::All,
            schedule: StepSchedule::default(),
            seeds: (0..10).collect(),
            max_iterations: 100_000,
            stride: 10,
            window: 50.0,
            window_mode: WindowMode::CumA,
            ratio: 0.95,
            burn_in: 10,
            include_g_term: true,
            epsilon: 0.1,
            estimator: None,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| io_error(path, source))?;
        Self::from_json(&text)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if !(self.window > 0.0) {
            return bad("window must be positive");
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad("ratio must lie in (0, 1)");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn estimator(&self) -> AverageRewardEstimator {
        self.estimator
            .unwrap_or(AverageRewardEstimator::AfterBurnIn { skip: self.burn_in as u64 * self.stride })
    }

    pub fn salmut_config(&self) -> SalmutConfig {
        SalmutConfig {
            schedule: self.schedule,
            include_g_term: self.include_g_term,
            estimator: self.estimator(),
            initial_thresholds: None,
            initial_values: None,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig { schedule: self.schedule, estimator: self.estimator(), epsilon: self.epsilon }
    }

    pub fn stopping_rule(&self) -> StoppingRule {
        StoppingRule { window: self.window, ratio: self.ratio, burn_in: self.burn_in, mode: self.window_mode }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_error(path: &Path, source: csv::Error) -> HarnessError {
    HarnessError::Csv { path: path.display().to_string(), source }
}

/// Window stopping rule on the running average reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub window: f64,
    pub ratio: f64,
    pub burn_in: usize,
    pub mode: WindowMode,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { window: 50.0, ratio: 0.95, burn_in: 10, mode: WindowMode::CumA }
    }
}

impl StoppingRule {
    /// Drops the burn-in records, then applies [`practical_convergence_index`].
    pub fn apply(&self, trace: &[TraceRecord]) -> Option<u64> {
        let rest = trace.get(self.burn_in..)?;
        practical_convergence_index(rest, self.window, self.ratio, self.mode)
    }
}

/// `min/max` of a window, or `None` when the values change sign or vanish.
fn same_sign_ratio(lo: f64, hi: f64) -> Option<f64> {
    if lo > 0.0 {
        Some(lo / hi)
    } else if hi < 0.0 {
        Some(hi / lo)
    } else {
        None
    }
}

/// First iteration at which the trailing window of records satisfies
/// `min ρ̂ / max ρ̂ > ratio`. In [`WindowMode::CumA`] the window is the
/// shortest suffix whose `cum_a` span reaches `window`; in
/// [`WindowMode::Records`] it is the last `window` records.
pub fn practical_convergence_index(trace: &[TraceRecord], window: f64, ratio: f64, mode: WindowMode) -> Option<u64> {
    let mut start = 0usize;
    for end in 0..trace.len() {
        let first = match mode {
            WindowMode::CumA => {
                if trace[end].cum_a - trace[0].cum_a < window {
                    continue;
                }
                while trace[end].cum_a - trace[start + 1].cum_a >= window {
                    start += 1;
                }
                start
            }
            WindowMode::Records => {
                let len = window.round().max(1.0) as usize;
                if end + 1 < len {
                    continue;
                }
                end + 1 - len
            }
        };
        let (lo, hi) = trace[first..=end]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.rho_hat), hi.max(r.rho_hat)));
        if same_sign_ratio(lo, hi).is_some_and(|r| r > ratio) {
            return Some(trace[end].n);
        }
    }
    None
}

/// Outcome of one seeded run of one algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: u64,
    pub convergence: Option<u64>,
    pub final_rho: f64,
    pub final_sigma: f64,
    pub final_policy: Vec<usize>,
    pub final_tau: Option<Vec<f64>>,
    pub storage: usize,
    pub max_value_writes: usize,
    pub max_threshold_writes: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

fn drive<L: OnlineLearner>(
    learner: &mut L,
    algorithm: Algorithm,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<RunResult, SolverError> {
    let mut trace = Vec::with_capacity((cfg.max_iterations / cfg.stride) as usize + 1);
    let (mut max_v, mut max_t) = (0, 0);
    for _ in 0..cfg.max_iterations {
        let report = learner.step();
        max_v = max_v.max(report.writes.values);
        max_t = max_t.max(report.writes.thresholds);
        if learner.progress().n.is_multiple_of(cfg.stride) {
            trace.push(learner.record());
        }
    }
    let eval = learner.evaluate_policy()?;
    let last = learner.record();
    Ok(RunResult {
        algorithm,
        seed,
        iterations: learner.progress().n,
        convergence: cfg.stopping_rule().apply(&trace),
        final_rho: learner.progress().rho_hat,
        final_sigma: eval.gain,
        final_policy: learner.policy_thresholds(),
        final_tau: last.thresholds,
        storage: learner.storage(),
        max_value_writes: max_v,
        max_threshold_writes: max_t,
        trace,
    })
}

/// Runs one algorithm for one seed.
pub fn run_single(
    model: &EventModel,
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    seed: u64,
) -> Result<RunResult, SolverError> {
    match algorithm {
        Algorithm::Salmut => {
            let mut l = Salmut::new(model, cfg.salmut_config(), seed)?;
            drive(&mut l, algorithm, seed, cfg)
        }
        Algorithm::Pds => drive(&mut PdsLearner::new(model, cfg.baseline_config(), seed), algorithm, seed, cfg),
        Algorithm::Qlearning => drive(&mut QLearner::new(model, cfg.baseline_config(), seed), algorithm, seed, cfg),
        Algorithm::All => Err(SolverError::Model(ModelError::Shape("expand `all` before running".into()))),
    }
}

fn format_f64(x: f64) -> String {
    format!("{x}")
}

/// Trace CSV header for `classes` threshold components.
pub fn trace_header(classes: usize) -> Vec<String> {
    let mut h = vec!["n".to_string(), "cum_a".into(), "rho_hat".into()];
    h.extend((1..=classes).map(|k| format!("tau_{k}")));
    h.push("state".into());
    h.extend((1..=classes).map(|k| format!("greedy_{k}")));
    h
}

pub fn write_trace(path: &Path, trace: &[TraceRecord], classes: usize) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(trace_header(classes)).map_err(|e| csv_error(path, e))?;
    for r in trace {
        let mut row = vec![r.n.to_string(), format_f64(r.cum_a), format_f64(r.rho_hat)];
        match &r.thresholds {
            Some(t) => row.extend(t.iter().map(|&x| format_f64(x))),
            None => row.extend(std::iter::repeat_n(String::new(), classes)),
        }
        row.push(r.state.to_string());
        match &r.greedy {
            Some(g) => row.extend(g.iter().map(|x| x.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), classes)),
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let classes = headers.iter().filter(|h| h.starts_with("tau_")).count();
    let bad = |what: &str| HarnessError::Config(format!("{}: malformed {what}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let n = field(0).parse().map_err(|_| bad("n"))?;
        let cum_a = field(1).parse().map_err(|_| bad("cum_a"))?;
        let rho_hat = field(2).parse().map_err(|_| bad("rho_hat"))?;
        let taus: Vec<&str> = (0..classes).map(|k| field(3 + k)).collect();
        let thresholds = if taus.iter().all(|t| t.is_empty()) {
            None
        } else {
            Some(taus.iter().map(|t| t.parse()).collect::<Result<Vec<f64>, _>>().map_err(|_| bad("tau"))?)
        };
        let state = field(3 + classes).parse().map_err(|_| bad("state"))?;
        let greedy_fields: Vec<&str> = (0..classes).map(|k| field(4 + classes + k)).collect();
        let greedy = if greedy_fields.iter().all(|g| g.is_empty()) {
            None
        } else {
            Some(greedy_fields.iter().map(|g| g.parse()).collect::<Result<Vec<usize>, _>>().map_err(|_| bad("greedy"))?)
        };
        out.push(TraceRecord { n, cum_a, rho_hat, thresholds, greedy, state });
    }
    Ok(out)
}

pub fn write_scan(path: &Path, rows: &[ScanRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let classes = rows.first().map_or(0, |r| r.thresholds.len());
    let mut header: Vec<String> = (1..=classes).map(|k| format!("tau_{k}")).collect();
    header.push("sigma".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut rec: Vec<String> = row.thresholds.iter().map(|t| t.to_string()).collect();
        rec.push(format_f64(row.sigma));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Median with `None` ranked above every value. `None` if the middle lands on `None`.
pub fn median_option(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

pub fn median(values: &[f64]) -> Option<f64> {
    median_option(&values.iter().map(|&x| Some(x)).collect::<Vec<_>>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub convergence: Vec<Option<u64>>,
    pub median_convergence: Option<f64>,
    pub final_sigma: Vec<f64>,
    pub median_final_sigma: Option<f64>,
    pub median_sigma_ratio: Option<f64>,
    pub final_rho: Vec<f64>,
    pub median_final_rho: Option<f64>,
    pub final_policy: Vec<Vec<usize>>,
    pub storage: usize,
    pub max_value_writes: usize,
    pub max_threshold_writes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub optimal_policy: Vec<usize>,
    pub optimal_sigma: f64,
    pub algorithms: Vec<AlgorithmSummary>,
    pub failures: Vec<RunFailure>,
}

impl Summary {
    pub fn algorithm(&self, a: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|s| s.algorithm == a)
    }
}

/// Runs and optionally written files of one experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: Summary,
    pub runs: Vec<RunResult>,
}

fn summarize(algorithm: Algorithm, runs: &[&RunResult], sigma_star: f64) -> AlgorithmSummary {
    let convergence: Vec<Option<u64>> = runs.iter().map(|r| r.convergence).collect();
    let final_sigma: Vec<f64> = runs.iter().map(|r| r.final_sigma).collect();
    let final_rho: Vec<f64> = runs.iter().map(|r| r.final_rho).collect();
    let median_final_sigma = median(&final_sigma);
    AlgorithmSummary {
        algorithm,
        seeds: runs.iter().map(|r| r.seed).collect(),
        median_convergence: median_option(&convergence.iter().map(|c| c.map(|x| x as f64)).collect::<Vec<_>>()),
        convergence,
        median_sigma_ratio: median_final_sigma.map(|s| s / sigma_star),
        median_final_sigma,
        median_final_rho: median(&final_rho),
        final_rho,
        final_sigma,
        final_policy: runs.iter().map(|r| r.final_policy.clone()).collect(),
        storage: runs.first().map_or(0, |r| r.storage),
        max_value_writes: runs.iter().map(|r| r.max_value_writes).max().unwrap_or(0),
        max_threshold_writes: runs.iter().map(|r| r.max_threshold_writes).max().unwrap_or(0),
    }
}

pub fn trace_path(out: &Path, algorithm: Algorithm, seed: u64) -> PathBuf {
    out.join(format!("trace_{}_seed{seed}.csv", algorithm.name()))
}

/// Runs every (algorithm, seed) pair, in parallel when configured. With
/// `out`, writes one trace CSV per run and `summary.json`. A failed run or
/// trace write is recorded in the summary and does not stop the batch.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Experiment, HarnessError> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let oracle = rvia_solve(&model, &RviaOptions::default())?;
    let jobs: Vec<(Algorithm, u64)> = cfg
        .algorithm
        .expand()
        .into_iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results = parallel::map(cfg.execution, jobs, |(a, seed)| (a, seed, run_single(&model, cfg, a, seed)));

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut failures = Vec::new();
    let mut runs = Vec::new();
    for (algorithm, seed, result) in results {
        match result {
            Ok(run) => {
                if let Some(dir) = out {
                    if let Err(e) = write_trace(&trace_path(dir, algorithm, seed), &run.trace, model.num_classes()) {
                        failures.push(RunFailure { algorithm, seed, error: e.to_string() });
                    }
                }
                runs.push(run);
            }
            Err(e) => failures.push(RunFailure { algorithm, seed, error: e.to_string() }),
        }
    }

    let algorithms = cfg
        .algorithm
        .expand()
        .into_iter()
        .filter_map(|a| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.algorithm == a).collect();
            (!mine.is_empty()).then(|| summarize(a, &mine, oracle.gain))
        })
        .collect();
    let summary = Summary {
        config: cfg.clone(),
        optimal_policy: oracle.thresholds,
        optimal_sigma: oracle.gain,
        algorithms,
        failures,
    };
    if let Some(dir) = out {
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary)?;
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    }
    Ok(Experiment { summary, runs })
}

pub fn read_summary(path: &Path) -> Result<Summary, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub median_convergence: Option<f64>,
    pub median_sigma_ratio: Option<f64>,
    pub storage: usize,
    pub value_writes: usize,
    pub threshold_writes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub mu: f64,
    pub rows: Vec<ComparisonRow>,
    pub absent: Vec<Algorithm>,
    pub checks: Vec<Check>,
}

impl ComparisonTable {
    pub fn row(&self, a: Algorithm) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.algorithm == a)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn show(x: Option<f64>) -> String {
    x.map_or("never".to_string(), |v| format!("{v}"))
}

/// Per-algorithm medians, storage and write counts, with pass/fail checks:
/// median convergence ordered SALMUT ≤ PDS ≤ Q-learning, Q-learning storage
/// above SALMUT's, SALMUT writes within `1 + N`, and every median final σ
/// within 2% of the optimum.
pub fn compare(summary: &Summary) -> ComparisonTable {
    let mut rows = Vec::new();
    let mut absent = Vec::new();
    for a in Algorithm::LEARNERS {
        match summary.algorithm(a) {
            Some(s) => rows.push(ComparisonRow {
                algorithm: a,
                median_convergence: s.median_convergence,
                median_sigma_ratio: s.median_sigma_ratio,
                storage: s.storage,
                value_writes: s.max_value_writes,
                threshold_writes: s.max_threshold_writes,
            }),
            None => absent.push(a),
        }
    }
    let find = |a| rows.iter().find(|r: &&ComparisonRow| r.algorithm == a);
    let mut checks = Vec::new();
    let conv = |a| find(a).map(|r| r.median_convergence.unwrap_or(f64::INFINITY));
    if let (Some(s), Some(p), Some(q)) = (conv(Algorithm::Salmut), conv(Algorithm::Pds), conv(Algorithm::Qlearning)) {
        checks.push(Check {
            name: "convergence ordering salmut <= pds <= qlearning".into(),
            passed: s.is_finite() && s <= p && p <= q,
            detail: format!("{s} / {p} / {q}"),
        });
    }
    if let (Some(s), Some(q)) = (find(Algorithm::Salmut), find(Algorithm::Qlearning)) {
        checks.push(Check {
            name: "storage qlearning > salmut".into(),
            passed: q.storage > s.storage,
            detail: format!("{} > {}", q.storage, s.storage),
        });
    }
    if let Some(s) = find(Algorithm::Salmut) {
        let classes = summary.optimal_policy.len();
        checks.push(Check {
            name: "salmut writes <= 1 value + N thresholds".into(),
            passed: s.value_writes <= 1 && s.threshold_writes <= classes,
            detail: format!("{} value, {} thresholds, N = {classes}", s.value_writes, s.threshold_writes),
        });
    }
    for r in &rows {
        checks.push(Check {
            name: format!("{} median sigma within 2%", r.algorithm),
            passed: r.median_sigma_ratio.is_some_and(|x| x >= 0.98),
            detail: show(r.median_sigma_ratio),
        });
    }
    ComparisonTable { mu: summary.config.model.mu, rows, absent, checks }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mu = {}", self.mu)?;
        writeln!(
            f,
            "{:<10} {:>12} {:>10} {:>8} {:>8} {:>11}",
            "algorithm", "median conv", "sigma/opt", "storage", "V writes", "tau writes"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>12} {:>10} {:>8} {:>8} {:>11}",
                r.algorithm.name(),
                show(r.median_convergence),
                r.median_sigma_ratio.map_or("-".into(), |x| format!("{x:.5}")),
                r.storage,
                r.value_writes,
                r.threshold_writes
            )?;
        }
        for a in &self.absent {
            writeln!(f, "{:<10} absent", a.name())?;
        }
        for c in &self.checks {
            writeln!(f, "[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientPoint {
    pub tau: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub include_g_term: bool,
    pub delta: f64,
    pub points: Vec<GradientPoint>,
    pub max_relative_error: f64,
}

/// Ordered vector with components drawn uniformly from `[0.5, W − 0.5]`.
pub fn random_interior_tau<R: Rng>(model: &EventModel, rng: &mut R) -> ThresholdVector {
    let w = model.max_state() as f64;
    let mut v: Vec<f64> = (0..model.num_classes()).map(|_| rng.random_range(0.5..w - 0.5)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    ThresholdVector::new(v, model.max_state()).expect("sorted interior vector")
}

/// Closed-form gradient against central finite differences at `samples`
/// random interior points. Errors are `max_k |a_k − d_k| / |d_k|`.
pub fn gradient_check(
    model: &EventModel,
    samples: usize,
    seed: u64,
    delta: f64,
    exec: Execution,
) -> Result<GradientCheck, SolverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taus: Vec<ThresholdVector> = (0..samples).map(|_| random_interior_tau(model, &mut rng)).collect();
    let points = parallel::map(exec, taus, |tau| -> Result<GradientPoint, SolverError> {
        let analytic = gradient_sigma(model, &tau, true)?;
        let numeric = finite_difference_gradient(model, &tau, delta)?;
        let err = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, d)| m.max((a - d).abs() / d.abs()));
        Ok(GradientPoint { tau: tau.values().to_vec(), analytic, numeric, relative_error: err })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let max_relative_error = points.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(GradientCheck { include_g_term: true, delta, points, max_relative_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: u64, cum_a: f64, rho_hat: f64) -> TraceRecord {
        TraceRecord { n, cum_a, rho_hat, thresholds: None, greedy: None, state: 0 }
    }

    #[test]
    fn constant_trace_converges_at_first_full_window() {
        let trace: Vec<TraceRecord> = (0..100).map(|i| rec(i, i as f64, 3.0)).collect();
        assert_eq!(practical_convergence_index(&trace, 50.0, 0.95, WindowMode::CumA), Some(50));
        assert_eq!(practical_convergence_index(&trace, 5.0, 0.95, WindowMode::Records), Some(4));
    }

    #[test]
    fn alternating_trace_never_converges() {
        let trace: Vec<TraceRecord> = (0..200).map(|i| rec(i, i as f64, if i % 2 == 0 { 1.0 } else { 2.0 })).collect();
        assert_eq!(practical_convergence_index(&trace, 50.0, 0.95, WindowMode::CumA), None);
    }

    #[test]
    fn short_trace_is_none() {
        let trace: Vec<TraceRecord> = (0..10).map(|i| rec(i, i as f64, 1.0)).collect();
        assert_eq!(practical_convergence_index(&trace, 50.0, 0.95, WindowMode::CumA), None);
        assert_eq!(StoppingRule::default().apply(&trace[..5]), None);
    }

    #[test]
    fn negative_values_use_magnitudes_and_zero_never_converges() {
        let trace: Vec<TraceRecord> = (0..100).map(|i| rec(i, i as f64, if i < 60 { -1.0 } else { 0.0 })).collect();
        assert_eq!(practical_convergence_index(&trace, 10.0, 0.95, WindowMode::CumA), Some(10));
        let zeros: Vec<TraceRecord> = (0..100).map(|i| rec(i, i as f64, 0.0)).collect();
        assert_eq!(practical_convergence_index(&zeros, 10.0, 0.95, WindowMode::CumA), None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median_option(&[Some(1.0), None, None]), None);
        assert_eq!(median_option(&[Some(1.0), Some(2.0), None]), Some(2.0));
        assert_eq!(median_option(&[]), None);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig { ratio: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { seeds: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { window: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"model": {"m": 5, "B": 5, "mu": 2, "lambda": [1, 1], "R": [20, 10]}}"#)
            .is_ok());
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Salmut, Algorithm::Pds, Algorithm::Qlearning, Algorithm::All] {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!(Algorithm::All.expand().len(), 3);
    }
}
