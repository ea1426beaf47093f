//! Exact dynamic-programming oracle: value iteration, relative value
//! iteration, threshold extraction, policy evaluation through the stationary
//! distribution, the closed-form gradient of the smoothed average reward, a
//! brute-force threshold scan and checkers for the structural properties.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::model::{ActionKind, EventModel, State};
use crate::parallel::{self, Execution};
use crate::threshold::{admission_chain, smooth_prob, smooth_prob_grad, ThresholdVector};

/// Tolerance for ties in the structural checkers.
pub const STRUCTURE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub reference_state: State,
    pub iterations: usize,
}

impl ValueTable {
    pub fn zeros(model: &EventModel) -> Self {
        Self { values: vec![0.0; model.num_states()], reference_state: model.reference_state(), iterations: 0 }
    }

    /// Forward differences `V(s+1) − V(s)`.
    pub fn differences(&self) -> Vec<f64> {
        differences(&self.values)
    }
}

pub fn differences(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Max minus min.
pub fn span(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// One synchronous Bellman sweep on the embedded chain:
/// `v'(s) = Σ_{controlled i} p_i(s)·max{R_i + v(s+1), v(s)} + p_0(s)·v((s−1)⁺) − h(s)`,
/// with the admit branch removed at `W`.
pub fn via_sweep(model: &EventModel, values: &[f64]) -> Vec<f64> {
    lazy_via_sweep(model, values, 0.0)
}

/// Sweep of the aperiodicity-transformed chain: a self-loop of mass
/// `laziness` is mixed into every state, `v' = (1 − laziness)·T v + laziness·v`.
/// The fixed point in relative values and the maximizing actions are those
/// of [`via_sweep`]; the gain is scaled by `1 − laziness`.
pub fn lazy_via_sweep(model: &EventModel, values: &[f64], laziness: f64) -> Vec<f64> {
    let w = model.max_state();
    (0..model.num_states())
        .map(|s| {
            let mut acc = -model.cost(s);
            for (event, &p) in model.event_probs(s).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let cont = if model.is_controlled(event) {
                    if s < w {
                        (model.reward(event) + values[s + 1]).max(values[s])
                    } else {
                        values[s]
                    }
                } else {
                    values[s.saturating_sub(1)]
                };
                acc += p * cont;
            }
            (1.0 - laziness) * acc + laziness * values[s]
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RviaOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Self-loop mass of the aperiodicity transform, in `[0, 1)`.
    pub laziness: f64,
}

impl Default for RviaOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1_000_000, laziness: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RviaSolution {
    pub values: ValueTable,
    pub thresholds: Vec<usize>,
    /// Per-transition optimal average reward.
    pub gain: f64,
    pub span: f64,
}

/// Relative value iteration until the span of successive differences drops
/// below `tol`. Values are normalized so that `V(s*) = 0`.
pub fn rvia_solve(model: &EventModel, opts: &RviaOptions) -> Result<RviaSolution, SolverError> {
    let s_ref = model.reference_state();
    let scale = 1.0 - opts.laziness;
    let mut values = vec![0.0; model.num_states()];
    let mut last_span = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let next = lazy_via_sweep(model, &values, opts.laziness);
        let delta: Vec<f64> = next.iter().zip(&values).map(|(a, b)| a - b).collect();
        let (lo, hi) = delta
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        last_span = hi - lo;
        let offset = next[s_ref];
        values = next.into_iter().map(|v| v - offset).collect();
        if last_span < opts.tol {
            let table = ValueTable { values, reference_state: s_ref, iterations: iter };
            let thresholds = extract_thresholds(&table.values, model);
            return Ok(RviaSolution { values: table, thresholds, gain: 0.5 * (hi + lo) / scale, span: last_span });
        }
    }
    Err(SolverError::NotConverged { iterations: opts.max_iter, span: last_span })
}

/// `U_k = min{s : V(s+1) − V(s) ≤ −R_k}`, or `W` when no state qualifies.
pub fn extract_thresholds(values: &[f64], model: &EventModel) -> Vec<usize> {
    let diffs = differences(values);
    (0..model.num_classes())
        .map(|k| {
            let r = model.class_reward(k);
            diffs.iter().position(|&d| d <= -r).unwrap_or(model.max_state())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityCheck {
    pub holds: bool,
    /// First `s` with `D(s+1) > D(s)`.
    pub first_violation: Option<State>,
}

/// Whether `V(s+1) − V(s)` is non-increasing in `s`.
pub fn check_concavity(values: &[f64]) -> ConcavityCheck {
    let d = differences(values);
    let first_violation = d.windows(2).position(|w| w[1] > w[0] + STRUCTURE_TOL);
    ConcavityCheck { holds: first_violation.is_none(), first_violation }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub holds: bool,
    /// `(n, s)` of the first sweep where `Dv_{n+1}(s) > Dv_n(s)`.
    pub first_violation: Option<(usize, State)>,
    pub violations: usize,
    /// Per-sweep thresholds `U_{k,n}` for `n = 1..=sweeps`.
    pub thresholds: Vec<Vec<usize>>,
}

/// Runs value iteration from `v_0 ≡ 0` and checks that every difference
/// `v_n(s+1) − v_n(s)` is non-increasing in `n`.
pub fn check_monotone_in_n(model: &EventModel, sweeps: usize, laziness: f64) -> MonotoneCheck {
    let mut values = vec![0.0; model.num_states()];
    let mut prev = differences(&values);
    let mut first_violation = None;
    let mut violations = 0;
    let mut thresholds = Vec::with_capacity(sweeps);
    for n in 0..sweeps {
        values = lazy_via_sweep(model, &values, laziness);
        let d = differences(&values);
        for (s, (&now, &before)) in d.iter().zip(&prev).enumerate() {
            if now > before + STRUCTURE_TOL {
                violations += 1;
                first_violation.get_or_insert((n, s));
            }
        }
        thresholds.push(extract_thresholds(&values, model));
        prev = d;
        // differences are shift-invariant; keep magnitudes bounded
        let offset = values[model.reference_state()];
        values.iter_mut().for_each(|v| *v -= offset);
    }
    MonotoneCheck { holds: violations == 0, first_violation, violations, thresholds }
}

/// Whether each class threshold along a sweep sequence never increases.
pub fn thresholds_non_increasing(sequence: &[Vec<usize>]) -> bool {
    sequence.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b <= a))
}

fn row_sums_ok(kernel: &DMatrix<f64>) -> Result<(), SolverError> {
    for (row, r) in kernel.row_iter().enumerate() {
        let sum = r.sum();
        if (sum - 1.0).abs() > 1e-9 || r.iter().any(|&x| x < 0.0) {
            return Err(SolverError::NotStochastic { row, sum });
        }
    }
    Ok(())
}

/// A state reachable from every other state exists iff the chain has a
/// single closed class.
fn is_unichain(kernel: &DMatrix<f64>) -> bool {
    let n = kernel.nrows();
    (0..n).any(|target| {
        // reverse search: who reaches `target`
        let mut seen = vec![false; n];
        seen[target] = true;
        let mut stack = vec![target];
        while let Some(j) = stack.pop() {
            for i in 0..n {
                if !seen[i] && kernel[(i, j)] > 0.0 {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen.iter().all(|&x| x)
    })
}

/// Stationary distribution of a unichain kernel by a direct solve of
/// `πP = π` with one balance equation replaced by `Σπ = 1`.
pub fn stationary_distribution(kernel: &DMatrix<f64>) -> Result<Vec<f64>, SolverError> {
    row_sums_ok(kernel)?;
    if !is_unichain(kernel) {
        return Err(SolverError::Singular);
    }
    let n = kernel.nrows();
    // Pᵀ − I with the diagonal taken as minus the off-diagonal row mass,
    // which avoids the cancellation in P(s, s) − 1
    let mut a = kernel.transpose();
    for s in 0..n {
        let off: f64 = (0..n).filter(|&j| j != s).map(|j| kernel[(s, j)]).sum();
        a[(s, s)] = -off;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu.solve(&b).ok_or(SolverError::Singular)?;
    // one step of iterative refinement
    if let Some(correction) = lu.solve(&(&b - &a * &pi)) {
        pi += correction;
    }
    let residual = (pi.transpose() * kernel - pi.transpose()).abs().max();
    if !residual.is_finite() || residual > 1e-9 {
        return Err(SolverError::Residual { residual });
    }
    // clean round-off below zero
    Ok(pi.iter().map(|&x| if x < 0.0 && x > -1e-12 { 0.0 } else { x }).collect())
}

/// Stationary distribution, gain and relative values of one fixed policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub stationary: Vec<f64>,
    /// Per-transition average reward.
    pub gain: f64,
    /// Relative values with `V(s*) = 0`.
    pub values: Vec<f64>,
}

/// Solves `V = g − σ + PV`, `V(s*) = 0` after finding `π` and `σ = π·g`.
pub fn evaluate_chain(
    kernel: &DMatrix<f64>,
    reward: &DVector<f64>,
    reference_state: State,
) -> Result<PolicyEvaluation, SolverError> {
    let stationary = stationary_distribution(kernel)?;
    let n = kernel.nrows();
    let gain: f64 = stationary.iter().zip(reward.iter()).map(|(p, g)| p * g).sum();
    let mut a = DMatrix::identity(n, n) - kernel;
    let mut rhs = reward.add_scalar(-gain);
    for j in 0..n {
        a[(reference_state, j)] = 0.0;
    }
    a[(reference_state, reference_state)] = 1.0;
    rhs[reference_state] = 0.0;
    let values = a.lu().solve(&rhs).ok_or(SolverError::Singular)?;
    Ok(PolicyEvaluation { stationary, gain, values: values.iter().copied().collect() })
}

/// Largest per-state residual of the evaluation equation `V = g − σ + PV`.
pub fn evaluation_residual(kernel: &DMatrix<f64>, reward: &DVector<f64>, eval: &PolicyEvaluation) -> f64 {
    let v = DVector::from_column_slice(&eval.values);
    let lhs = reward.add_scalar(-eval.gain) + kernel * &v - &v;
    lhs.abs().max()
}

/// Evaluates the hard (indicator) or sigmoid-smoothed threshold policy.
pub fn average_reward_sigma(
    model: &EventModel,
    tau: &ThresholdVector,
    smoothed: bool,
) -> Result<PolicyEvaluation, SolverError> {
    let (kernel, reward) = threshold_chain(model, tau, smoothed);
    evaluate_chain(&kernel, &reward, model.reference_state())
}

/// Kernel and reward of a threshold policy.
pub fn threshold_chain(model: &EventModel, tau: &ThresholdVector, smoothed: bool) -> (DMatrix<f64>, DVector<f64>) {
    if smoothed {
        admission_chain(model, |s, k| 1.0 - smooth_prob(s as f64, tau.get(k)))
    } else {
        admission_chain(model, |s, k| if tau.select_action(s, k) == ActionKind::Admit { 1.0 } else { 0.0 })
    }
}

/// Evaluates an arbitrary deterministic admission rule `admit(s, class)`.
pub fn evaluate_admission_rule<F>(model: &EventModel, admit: F) -> Result<PolicyEvaluation, SolverError>
where
    F: Fn(State, usize) -> bool,
{
    let (kernel, reward) = admission_chain(model, |s, k| if admit(s, k) { 1.0 } else { 0.0 });
    evaluate_chain(&kernel, &reward, model.reference_state())
}

/// Closed-form gradient of the smoothed average reward,
/// `∇σ = Σ_s π(s)(∇g_s + Σ_{s'} ∇P_{ss'} V(s'))` with `∇P = (P0 − P1)∇f`.
/// With `include_g_term = false` the reward-derivative term is dropped.
pub fn gradient_sigma(model: &EventModel, tau: &ThresholdVector, include_g_term: bool) -> Result<Vec<f64>, SolverError> {
    let eval = average_reward_sigma(model, tau, true)?;
    Ok(gradient_from_evaluation(model, tau, &eval, include_g_term))
}

pub fn gradient_from_evaluation(
    model: &EventModel,
    tau: &ThresholdVector,
    eval: &PolicyEvaluation,
    include_g_term: bool,
) -> Vec<f64> {
    let mut grad = vec![0.0; model.num_classes()];
    let v = &eval.values;
    for s in 0..model.max_state() {
        let pi = eval.stationary[s];
        if pi == 0.0 {
            continue;
        }
        for &event in model.controlled_events() {
            let k = model.class_of(event).expect("controlled");
            let df = smooth_prob_grad(s as f64, tau.get(k));
            let mut bracket = v[s] - v[s + 1];
            if include_g_term {
                bracket -= model.reward(event);
            }
            grad[k] += pi * model.event_prob(s, event) * df * bracket;
        }
    }
    grad
}

/// Central finite differences of the smoothed average reward.
pub fn finite_difference_gradient(model: &EventModel, tau: &ThresholdVector, delta: f64) -> Result<Vec<f64>, SolverError> {
    let base = tau.values().to_vec();
    let sigma_at = |vals: Vec<f64>| -> Result<f64, SolverError> {
        let (kernel, reward) = admission_chain(model, |s, k| 1.0 - smooth_prob(s as f64, vals[k]));
        Ok(evaluate_chain(&kernel, &reward, model.reference_state())?.gain)
    };
    (0..base.len())
        .map(|k| {
            let mut up = base.clone();
            let mut down = base.clone();
            up[k] += delta;
            down[k] -= delta;
            Ok((sigma_at(up)? - sigma_at(down)?) / (2.0 * delta))
        })
        .collect()
}

/// Projected gradient ascent on the smoothed average reward.
pub fn smoothed_ascent(
    model: &EventModel,
    start: &ThresholdVector,
    include_g_term: bool,
    step: f64,
    iterations: usize,
) -> Result<ThresholdVector, SolverError> {
    let mut tau = start.clone();
    for _ in 0..iterations {
        let grad = gradient_sigma(model, &tau, include_g_term)?;
        for (k, g) in grad.iter().enumerate() {
            let x = tau.get(k) + step * g;
            tau.set_projected(k, x);
        }
    }
    Ok(tau)
}

/// All integer vectors `W ≥ τ(1) ≥ … ≥ τ(N) ≥ 0` in lexicographic order.
pub fn ordered_integer_vectors(max_state: usize, len: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, hi: usize, left: usize, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for v in 0..=hi {
            prefix.push(v);
            rec(prefix, v, left - 1, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(len), max_state, len, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub thresholds: Vec<usize>,
    pub sigma: f64,
}

/// Hard average reward of every ordered integer threshold vector.
pub fn scan(model: &EventModel, exec: Execution) -> Result<Vec<ScanRow>, SolverError> {
    let vectors = ordered_integer_vectors(model.max_state(), model.num_classes());
    let w = model.max_state();
    parallel::map(exec, vectors, |thresholds| {
        let tau = ThresholdVector::from_integers(&thresholds, w)?;
        let sigma = average_reward_sigma(model, &tau, false)?.gain;
        Ok(ScanRow { thresholds, sigma })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteForceOptimum {
    pub thresholds: Vec<usize>,
    pub gain: f64,
    pub evaluated: usize,
}

/// Argmax of the hard average reward over all ordered integer vectors.
/// Ties keep the first vector in lexicographic order.
pub fn brute_force_optimal_tau(model: &EventModel, exec: Execution) -> Result<BruteForceOptimum, SolverError> {
    let rows = scan(model, exec)?;
    Ok(argmax(&rows))
}

pub fn argmax(rows: &[ScanRow]) -> BruteForceOptimum {
    let best = rows
        .iter()
        .fold(None::<&ScanRow>, |best, row| match best {
            Some(b) if b.sigma >= row.sigma => Some(b),
            _ => Some(row),
        })
        .expect("scan is never empty");
    BruteForceOptimum { thresholds: best.thresholds.clone(), gain: best.sigma, evaluated: rows.len() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceViolation {
    pub coordinate: usize,
    /// The full vector at the start of the slice.
    pub base: Vec<usize>,
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnimodalityReport {
    pub slices: usize,
    pub violations: Vec<SliceViolation>,
}

/// Non-decreasing, then non-increasing, up to `STRUCTURE_TOL`.
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut descending = false;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d < -STRUCTURE_TOL {
            descending = true;
        } else if d > STRUCTURE_TOL && descending {
            return false;
        }
    }
    true
}

/// Checks every one-dimensional coordinate slice of the hard average reward
/// over the ordered integer lattice.
pub fn unimodality_scan(model: &EventModel, exec: Execution) -> Result<UnimodalityReport, SolverError> {
    let rows = scan(model, exec)?;
    Ok(unimodality_from_scan(model, &rows))
}

pub fn unimodality_from_scan(model: &EventModel, rows: &[ScanRow]) -> UnimodalityReport {
    let table: HashMap<&[usize], f64> = rows.iter().map(|r| (r.thresholds.as_slice(), r.sigma)).collect();
    let w = model.max_state();
    let n = model.num_classes();
    let mut slices = 0;
    let mut violations = Vec::new();
    for coordinate in 0..n {
        // each vector whose `coordinate` sits at its lower bound starts one slice
        for row in rows {
            let t = &row.thresholds;
            let lo = if coordinate + 1 < n { t[coordinate + 1] } else { 0 };
            if t[coordinate] != lo {
                continue;
            }
            let hi = if coordinate == 0 { w } else { t[coordinate - 1] };
            let mut probe = t.clone();
            let sigmas: Vec<f64> = (lo..=hi)
                .map(|v| {
                    probe[coordinate] = v;
                    table[probe.as_slice()]
                })
                .collect();
            slices += 1;
            if !is_unimodal(&sigmas) {
                violations.push(SliceViolation { coordinate, base: t.clone(), sigmas });
            }
        }
    }
    UnimodalityReport { slices, violations }
}
