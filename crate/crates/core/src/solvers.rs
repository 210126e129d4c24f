//! Discounted-cost solvers: value iteration and the two monotone policy
//! iteration variants, plus exact policy evaluation.
//!
//! All three iterative solvers share one Jacobi sweep. They differ only in
//! the action set searched at `(b, h)`:
//!
//! * `Dp`: every action.
//! * `MpiSubmodular`: `{θ(b-1, h), ..., A_m}`.
//! * `MpiLNatural`: `{θ(b-1, h), θ(b-1, h) + 1}` capped at `A_m`.
//!
//! where `θ(b-1, h)` is the minimizer just found in the same sweep. The
//! sweep runs `h` in the outer loop and `b` ascending in the inner loop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mdp::SystemModel;

/// Convergence threshold used throughout the experiments.
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dp,
    #[serde(rename = "mpi_sub")]
    MpiSubmodular,
    #[serde(rename = "mpi_lnat")]
    MpiLNatural,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Dp, Algorithm::MpiSubmodular, Algorithm::MpiLNatural];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dp => "dp",
            Algorithm::MpiSubmodular => "mpi_sub",
            Algorithm::MpiLNatural => "mpi_lnat",
        }
    }

    #[inline]
    fn candidates(self, previous: Option<usize>, max_action: usize) -> (usize, usize) {
        match (self, previous) {
            (Algorithm::Dp, _) | (_, None) => (0, max_action),
            (Algorithm::MpiSubmodular, Some(p)) => (p, max_action),
            (Algorithm::MpiLNatural, Some(p)) => (p, (p + 1).min(max_action)),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Table over `(b, h)`, stored row-major in `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    num_b: usize,
    num_h: usize,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(num_b: usize, num_h: usize) -> Self {
        Self::filled(num_b, num_h, 0.0)
    }

    pub fn filled(num_b: usize, num_h: usize, value: f64) -> Self {
        Self {
            num_b,
            num_h,
            values: vec![value; num_b * num_h],
        }
    }

    pub fn from_fn(num_b: usize, num_h: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(num_b * num_h);
        for b in 0..num_b {
            for h in 0..num_h {
                values.push(f(b, h));
            }
        }
        Self { num_b, num_h, values }
    }

    pub fn num_queue_states(&self) -> usize {
        self.num_b
    }

    pub fn num_channel_states(&self) -> usize {
        self.num_h
    }

    #[inline]
    pub fn get(&self, b: usize, h: usize) -> f64 {
        self.values[b * self.num_h + h]
    }

    #[inline]
    pub fn set(&mut self, b: usize, h: usize, v: f64) {
        self.values[b * self.num_h + h] = v;
    }

    /// Values indexed by flattened state `b * K + h`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.num_h).map(<[f64]>::to_vec).collect()
    }

    /// CSV with one row per queue state and one column per channel state.
    pub fn to_csv(&self) -> String {
        table_csv(self.num_h, self.values.chunks(self.num_h))
    }
}

impl Serialize for ValueFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            queue_states: usize,
            channel_states: usize,
            values: Vec<Vec<f64>>,
        }
        Repr {
            queue_states: self.num_b,
            channel_states: self.num_h,
            values: self.rows(),
        }
        .serialize(s)
    }
}

/// Deterministic stationary policy `θ(b, h)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    num_b: usize,
    num_h: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn constant(num_b: usize, num_h: usize, action: usize) -> Self {
        Self {
            num_b,
            num_h,
            actions: vec![action; num_b * num_h],
        }
    }

    pub fn from_fn(num_b: usize, num_h: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut actions = Vec::with_capacity(num_b * num_h);
        for b in 0..num_b {
            for h in 0..num_h {
                actions.push(f(b, h));
            }
        }
        Self { num_b, num_h, actions }
    }

    /// Builds a policy from rows indexed by queue state.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let num_h = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || num_h == 0 || rows.iter().any(|r| r.len() != num_h) {
            return Err(Error::Dimension("policy rows must be non-empty and equal length".into()));
        }
        Ok(Self {
            num_b: rows.len(),
            num_h,
            actions: rows.concat(),
        })
    }

    pub fn num_queue_states(&self) -> usize {
        self.num_b
    }

    pub fn num_channel_states(&self) -> usize {
        self.num_h
    }

    #[inline]
    pub fn get(&self, b: usize, h: usize) -> usize {
        self.actions[b * self.num_h + h]
    }

    #[inline]
    pub fn set(&mut self, b: usize, h: usize, a: usize) {
        self.actions[b * self.num_h + h] = a;
    }

    /// Actions indexed by flattened state `b * K + h`.
    pub fn as_slice(&self) -> &[usize] {
        &self.actions
    }

    pub fn max_action(&self) -> usize {
        self.actions.iter().copied().max().unwrap_or(0)
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.actions.chunks(self.num_h).map(<[usize]>::to_vec).collect()
    }

    pub fn to_csv(&self) -> String {
        table_csv(self.num_h, self.actions.chunks(self.num_h))
    }

    /// Parses the format written by [`Policy::to_csv`]. Lines starting with
    /// `#` are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Dimension("empty policy CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "b" {
            return Err(Error::Dimension(format!("bad policy CSV header `{header}`")));
        }
        let num_h = cols.len() - 1;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != num_h + 1 {
                return Err(Error::Dimension(format!(
                    "policy CSV row {i} has {} fields, expected {}",
                    fields.len(),
                    num_h + 1
                )));
            }
            let b: usize = fields[0]
                .parse()
                .map_err(|_| Error::Dimension(format!("bad queue index `{}`", fields[0])))?;
            if b != i {
                return Err(Error::Dimension(format!("expected queue state {i}, found {b}")));
            }
            let row = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<usize>()
                        .map_err(|_| Error::Dimension(format!("bad action `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

impl Serialize for Policy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            queue_states: usize,
            channel_states: usize,
            actions: Vec<Vec<usize>>,
        }
        Repr {
            queue_states: self.num_b,
            channel_states: self.num_h,
            actions: self.rows(),
        }
        .serialize(s)
    }
}

fn table_csv<'a, T: std::fmt::Display + 'a>(
    num_h: usize,
    rows: impl Iterator<Item = &'a [T]>,
) -> String {
    let mut out = String::from("b");
    for h in 1..=num_h {
        let _ = write!(out, ",h{h}");
    }
    out.push('\n');
    for (b, row) in rows.enumerate() {
        let _ = write!(out, "{b}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub epsilon: f64,
    pub q_evals_total: u64,
    pub q_evals_per_iteration: Vec<u64>,
    /// `‖V(n) - V(n-1)‖_∞` for each iteration.
    pub sup_norm_trace: Vec<f64>,
}

impl SolveReport {
    pub fn mean_q_evals_per_iteration(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.q_evals_total as f64 / self.iterations as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub epsilon: f64,
    pub initial: Option<ValueFunction>,
    /// Overrides the default cap `ceil(10 ln(ε(1-β)) / ln β) + 1`.
    pub max_iterations: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            initial: None,
            max_iterations: None,
        }
    }
}

impl SolveOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

/// Default iteration cap for a given threshold and discount factor.
pub fn default_iteration_cap(epsilon: f64, discount: f64) -> usize {
    let raw = (10.0 * (epsilon * (1.0 - discount)).ln() / discount.ln()).ceil();
    let cap = if raw.is_finite() && raw > 1.0 { raw as usize } else { 1 };
    cap + 1
}

/// `Q(x, a) = c(x, a) + β Σ_{x'} P^a_{x x'} V(x')`, evaluated directly.
pub fn q_value(model: &SystemModel, values: &ValueFunction, b: usize, h: usize, a: usize) -> f64 {
    let channel = model.channel().transition();
    let mut acc = 0.0;
    for (b2, &pb) in model.queue_row(b, a).iter().enumerate() {
        if pb == 0.0 {
            continue;
        }
        for (h2, &ph) in channel[h].iter().enumerate() {
            acc += pb * ph * values.get(b2, h2);
        }
    }
    model.immediate_cost(b, h, a) + model.discount() * acc
}

/// Computes `Q` from a value function with the channel expectation
/// precomputed, counting every evaluation.
struct QEvaluator<'m> {
    model: &'m SystemModel,
    /// `[h][b'] = Σ_{h'} P_{h h'} V(b', h')`
    expected: Vec<f64>,
    evals: u64,
}

impl<'m> QEvaluator<'m> {
    fn new(model: &'m SystemModel) -> Self {
        Self {
            model,
            expected: vec![0.0; model.num_states()],
            evals: 0,
        }
    }

    fn load(&mut self, values: &ValueFunction) {
        let num_b = self.model.num_queue_states();
        let num_h = self.model.num_channel_states();
        let p = self.model.channel().transition();
        for h in 0..num_h {
            for b2 in 0..num_b {
                let mut acc = 0.0;
                for (h2, &ph) in p[h].iter().enumerate() {
                    acc += ph * values.get(b2, h2);
                }
                self.expected[h * num_b + b2] = acc;
            }
        }
    }

    #[inline]
    fn q(&mut self, b: usize, h: usize, a: usize) -> f64 {
        self.evals += 1;
        self.q_uncounted(b, h, a)
    }

    #[inline]
    fn q_uncounted(&self, b: usize, h: usize, a: usize) -> f64 {
        let num_b = self.model.num_queue_states();
        let w = &self.expected[h * num_b..(h + 1) * num_b];
        let cont: f64 = self
            .model
            .queue_row_sparse(b, a)
            .iter()
            .map(|&(b2, p)| p * w[b2])
            .sum();
        self.model.immediate_cost(b, h, a) + self.model.discount() * cont
    }

    /// One sweep with the algorithm's action sets. Returns the new values and
    /// minimizers; ties go to the smallest action.
    fn sweep(&mut self, algorithm: Algorithm, count: bool) -> (ValueFunction, Policy) {
        let num_b = self.model.num_queue_states();
        let num_h = self.model.num_channel_states();
        let max_action = self.model.max_action();
        let mut values = ValueFunction::zeros(num_b, num_h);
        let mut policy = Policy::constant(num_b, num_h, 0);
        for h in 0..num_h {
            let mut previous = None;
            for b in 0..num_b {
                let (lo, hi) = algorithm.candidates(previous, max_action);
                let mut best_a = lo;
                let mut best_q = f64::INFINITY;
                for a in lo..=hi {
                    let q = if count { self.q(b, h, a) } else { self.q_uncounted(b, h, a) };
                    if q < best_q {
                        best_q = q;
                        best_a = a;
                    }
                }
                values.set(b, h, best_q);
                policy.set(b, h, best_a);
                previous = Some(best_a);
            }
        }
        (values, policy)
    }
}

/// Greedy policy with respect to `values`, searching every action.
pub fn greedy_policy(model: &SystemModel, values: &ValueFunction) -> Policy {
    let mut eval = QEvaluator::new(model);
    eval.load(values);
    eval.sweep(Algorithm::Dp, false).1
}

/// Runs `algorithm` to convergence.
pub fn solve(model: &SystemModel, algorithm: Algorithm, options: &SolveOptions) -> Result<Solution> {
    solve_observed(model, algorithm, options, |_, _, _| {})
}

/// Like [`solve`], calling `observer(n, V(n), θ(n))` after every iteration,
/// where `θ(n)` holds the minimizers of that sweep.
pub fn solve_observed(
    model: &SystemModel,
    algorithm: Algorithm,
    options: &SolveOptions,
    mut observer: impl FnMut(usize, &ValueFunction, &Policy),
) -> Result<Solution> {
    if !(options.epsilon > 0.0) {
        return Err(Error::InvalidConfig {
            field: "epsilon",
            reason: format!("must be positive, got {}", options.epsilon),
        });
    }
    let num_b = model.num_queue_states();
    let num_h = model.num_channel_states();
    let mut current = match &options.initial {
        Some(v) => {
            if v.num_b != num_b || v.num_h != num_h {
                return Err(Error::Dimension(format!(
                    "initial values are {}x{}, model is {num_b}x{num_h}",
                    v.num_b, v.num_h
                )));
            }
            v.clone()
        }
        None => ValueFunction::zeros(num_b, num_h),
    };
    let cap = options
        .max_iterations
        .unwrap_or_else(|| default_iteration_cap(options.epsilon, model.discount()));

    let mut eval = QEvaluator::new(model);
    let mut per_iteration = Vec::new();
    let mut trace = Vec::new();
    loop {
        if per_iteration.len() >= cap {
            return Err(Error::NotConverged {
                iterations: per_iteration.len(),
                last_gap: trace.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        eval.load(&current);
        let before = eval.evals;
        let (next, minimizers) = eval.sweep(algorithm, true);
        per_iteration.push(eval.evals - before);
        let gap = next.sup_distance(&current);
        trace.push(gap);
        current = next;
        observer(per_iteration.len(), &current, &minimizers);
        if gap <= options.epsilon {
            break;
        }
    }

    eval.load(&current);
    let (_, policy) = eval.sweep(algorithm, false);
    Ok(Solution {
        values: current,
        policy,
        report: SolveReport {
            algorithm,
            iterations: per_iteration.len(),
            epsilon: options.epsilon,
            q_evals_total: eval.evals,
            q_evals_per_iteration: per_iteration,
            sup_norm_trace: trace,
        },
    })
}

/// Plain value iteration over the full action set.
pub fn value_iteration(
    model: &SystemModel,
    epsilon: f64,
    initial: Option<ValueFunction>,
) -> Result<Solution> {
    solve(
        model,
        Algorithm::Dp,
        &SolveOptions {
            epsilon,
            initial,
            max_iterations: None,
        },
    )
}

/// Monotone policy iteration that only searches actions no smaller than the
/// minimizer at the previous queue state.
pub fn mpi_submodular(model: &SystemModel, epsilon: f64) -> Result<Solution> {
    solve(model, Algorithm::MpiSubmodular, &SolveOptions::with_epsilon(epsilon))
}

/// Monotone policy iteration that only searches the previous minimizer and
/// its successor.
pub fn mpi_lnatural(model: &SystemModel, epsilon: f64) -> Result<Solution> {
    solve(model, Algorithm::MpiLNatural, &SolveOptions::with_epsilon(epsilon))
}

/// Exact value of a stationary policy: solves `(I - β P_θ) V = c_θ`.
pub fn evaluate_policy(model: &SystemModel, policy: &Policy) -> ValueFunction {
    let n = model.num_states();
    let num_h = model.num_channel_states();
    let beta = model.discount();
    let channel = model.channel().transition();
    let mut matrix = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    for x in 0..n {
        let s = model.state(x);
        let a = policy.get(s.b, s.h);
        rhs[x] = model.immediate_cost(s.b, s.h, a);
        if beta == 0.0 {
            continue;
        }
        for &(b2, pb) in model.queue_row_sparse(s.b, a) {
            for (h2, &ph) in channel[s.h].iter().enumerate() {
                if ph > 0.0 {
                    matrix[(x, b2 * num_h + h2)] -= beta * pb * ph;
                }
            }
        }
    }
    let solved = matrix
        .lu()
        .solve(&rhs)
        .expect("I - βP is nonsingular for β < 1");
    ValueFunction {
        num_b: model.num_queue_states(),
        num_h,
        values: solved.iter().copied().collect(),
    }
}

/// `J(θ) = Σ_x V_θ(x)`.
pub fn policy_objective(model: &SystemModel, policy: &Policy) -> f64 {
    evaluate_policy(model, policy).total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_fsmc, ChannelParams, FsmcChannel};
    use crate::mdp::{make_poisson_arrivals, ArrivalDist, SystemConfig, Truncation};
    use proptest::prelude::*;

    fn fig_model(weight: f64, k: usize) -> SystemModel {
        let channel = build_fsmc(&ChannelParams {
            average_snr: 1.0,
            doppler_hz: 10.0,
            epoch_seconds: 1e-3,
            num_states: k,
        })
        .unwrap();
        SystemModel::new(SystemConfig {
            queue_size: 15,
            max_action: 5,
            weight,
            ber_constraint: 1e-3,
            discount: 0.95,
            arrivals: make_poisson_arrivals(3.0, 15, Truncation::Renormalize).unwrap(),
            channel,
            packet_bits: None,
        })
        .unwrap()
    }

    fn small_model(
        queue_size: usize,
        max_action: usize,
        pmf: Vec<f64>,
        channel: FsmcChannel,
        weight: f64,
        discount: f64,
    ) -> SystemModel {
        SystemModel::new(SystemConfig {
            queue_size,
            max_action,
            weight,
            ber_constraint: 1e-3,
            discount,
            arrivals: ArrivalDist::new(pmf).unwrap(),
            channel,
            packet_bits: None,
        })
        .unwrap()
    }

    fn one_state_channel() -> FsmcChannel {
        FsmcChannel::from_parts(vec![0.0], vec![vec![1.0]], vec![1.0]).unwrap()
    }

    /// Brute-force Q by explicit enumeration of (b', h').
    fn q_oracle(m: &SystemModel, v: &ValueFunction, b: usize, h: usize, a: usize) -> f64 {
        let mut total = m.immediate_cost(b, h, a);
        for (f, &pf) in m.config().arrivals.pmf().iter().enumerate() {
            let b2 = crate::mdp::queue_next(b, a, f, m.queue_size());
            for h2 in 0..m.num_channel_states() {
                total += m.discount() * pf * m.channel().transition()[h][h2] * v.get(b2, h2);
            }
        }
        total
    }

    #[test]
    fn q_value_limits() {
        let m = fig_model(1.0, 4);
        let zero = ValueFunction::zeros(16, 4);
        for (b, h, a) in [(0, 0, 0), (7, 2, 3), (15, 3, 5)] {
            assert_eq!(q_value(&m, &zero, b, h, a), m.immediate_cost(b, h, a));
        }
        let myopic = small_model(
            3,
            2,
            vec![0.25, 0.25, 0.25, 0.25],
            one_state_channel(),
            2.0,
            0.0,
        );
        let v = ValueFunction::filled(4, 1, 123.0);
        assert_eq!(q_value(&myopic, &v, 3, 0, 1), myopic.immediate_cost(3, 0, 1));
    }

    #[test]
    fn q_value_matches_enumeration() {
        let m = fig_model(3.0, 4);
        let v = ValueFunction::from_fn(16, 4, |b, h| (b * b) as f64 * 0.7 + h as f64 - 2.0);
        for b in 0..16 {
            for h in 0..4 {
                for a in 0..6 {
                    let got = q_value(&m, &v, b, h, a);
                    let want = q_oracle(&m, &v, b, h, a);
                    assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn myopic_solve() {
        let m = small_model(
            3,
            2,
            vec![0.1, 0.2, 0.3, 0.4],
            one_state_channel(),
            5.0,
            0.0,
        );
        let sol = value_iteration(&m, 1e-4, None).unwrap();
        assert_eq!(sol.report.iterations, 2);
        assert_eq!(sol.report.sup_norm_trace[1], 0.0);
        for b in 0..4 {
            let best = (0..3)
                .min_by(|&x, &y| m.immediate_cost(b, 0, x).total_cmp(&m.immediate_cost(b, 0, y)))
                .unwrap();
            assert_eq!(sol.policy.get(b, 0), best);
            assert_eq!(sol.values.get(b, 0), m.immediate_cost(b, 0, best));
        }
    }

    #[test]
    fn tiny_instance_matches_policy_enumeration() {
        // L_B = 1, K = 1, A_m = 1, one packet every epoch.
        let m = small_model(1, 1, vec![0.0, 1.0], one_state_channel(), 4.0, 0.9);
        let sol = value_iteration(&m, 1e-8, None).unwrap();
        let mut best = f64::INFINITY;
        let mut best_policy = None;
        for a0 in 0..2 {
            for a1 in 0..2 {
                let p = Policy::from_rows(&[vec![a0], vec![a1]]).unwrap();
                let j = policy_objective(&m, &p);
                if j < best - 1e-12 {
                    best = j;
                    best_policy = Some(p);
                }
            }
        }
        assert_eq!(Some(sol.policy.clone()), best_policy);
        assert!((policy_objective(&m, &sol.policy) - best).abs() < 1e-9);
    }

    #[test]
    fn fig3_policy_is_monotone_with_unit_steps() {
        let m = fig_model(1.0, 8);
        let sol = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
        for h in 0..8 {
            for b in 0..15 {
                let (lo, hi) = (sol.policy.get(b, h), sol.policy.get(b + 1, h));
                assert!(hi >= lo && hi <= lo + 1, "b = {b}, h = {h}");
            }
        }
        for b in 0..16 {
            for h in 0..7 {
                assert!(sol.policy.get(b, h + 1) >= sol.policy.get(b, h), "b = {b}, h = {h}");
            }
        }
    }

    #[test]
    fn mpi_variants_match_dp() {
        for w in [1.0, 400.0] {
            let m = fig_model(w, 8);
            let dp = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
            let sub = mpi_submodular(&m, DEFAULT_EPSILON).unwrap();
            let lnat = mpi_lnatural(&m, DEFAULT_EPSILON).unwrap();
            for other in [&sub, &lnat] {
                assert_eq!(other.policy, dp.policy);
                assert!(other.values.sup_distance(&dp.values) <= 10.0 * DEFAULT_EPSILON);
                assert_eq!(other.report.iterations, dp.report.iterations);
            }
            let full = (16 * 8 * 6) as u64;
            assert!(dp.report.q_evals_per_iteration.iter().all(|&c| c == full));
            for (&s, &l) in sub
                .report
                .q_evals_per_iteration
                .iter()
                .zip(&lnat.report.q_evals_per_iteration)
            {
                assert!(l <= s && s <= full);
                assert!(l as usize <= 2 * 16 * 8 + (6 - 2) * 8);
            }
        }
    }

    #[test]
    fn evaluate_policy_examples() {
        // Zero cost everywhere.
        let m = small_model(2, 1, vec![1.0, 0.0, 0.0], one_state_channel(), 1.0, 0.9);
        let v = evaluate_policy(&m, &Policy::constant(3, 1, 0));
        assert!(v.as_slice().iter().all(|&x| x == 0.0));

        // DP-optimal policy reproduces the DP fixed point up to the
        // stopping-rule bound β ε / (1 - β).
        for w in [1.0, 20.0, 400.0] {
            let m = fig_model(w, 4);
            let sol = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
            let v = evaluate_policy(&m, &sol.policy);
            let bound = 0.95 * DEFAULT_EPSILON / 0.05;
            assert!(v.sup_distance(&sol.values) <= bound, "w = {w}");
        }
    }

    #[test]
    fn constant_cost_geometric_series() {
        // One packet in, one packet out, every epoch: queue pinned at b = 1
        // with a = 1 costs c_tr(1) each epoch.
        let snr = crate::mdp::transmission_cost(1, 1.0, 1e-3);
        let channel = FsmcChannel::from_parts(vec![0.0], vec![vec![1.0]], vec![snr]).unwrap();
        let m = small_model(1, 1, vec![0.0, 1.0], channel, 1.0, 0.8);
        assert!((m.immediate_cost(1, 0, 1) - 1.0).abs() < 1e-15);
        assert!((m.immediate_cost(0, 0, 1) - 1.0).abs() < 1e-15);
        let v = evaluate_policy(&m, &Policy::constant(2, 1, 1));
        for &x in v.as_slice() {
            assert!((x - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn iterates_keep_structure_and_contract() {
        let m = fig_model(20.0, 6);
        let beta = m.discount();
        let mut last: Option<ValueFunction> = None;
        let sol = solve_observed(&m, Algorithm::Dp, &SolveOptions::default(), |_, v, _| {
            for h in 0..6 {
                for b in 0..15 {
                    assert!(v.get(b + 1, h) >= v.get(b, h));
                }
                for b in 1..15 {
                    let mid = v.get(b + 1, h) + v.get(b - 1, h) - 2.0 * v.get(b, h);
                    assert!(mid >= -1e-9);
                }
            }
            last = Some(v.clone());
        })
        .unwrap();
        assert_eq!(last.as_ref(), Some(&sol.values));
        for w in sol.report.sup_norm_trace.windows(2) {
            assert!(w[1] <= beta * w[0] + 1e-9);
        }
        assert!(*sol.report.sup_norm_trace.last().unwrap() <= DEFAULT_EPSILON);
    }

    #[test]
    fn iteration_cap_signals() {
        let m = fig_model(1.0, 2);
        let err = solve(
            &m,
            Algorithm::Dp,
            &SolveOptions {
                epsilon: 1e-4,
                initial: None,
                max_iterations: Some(3),
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 3, .. }));
        assert_eq!(default_iteration_cap(1e-4, 0.0), 2);
        assert!(default_iteration_cap(1e-4, 0.95) > 200);
    }

    #[test]
    fn csv_round_trip_and_json() {
        let m = fig_model(1.0, 3);
        let sol = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
        let csv = sol.policy.to_csv();
        assert!(csv.starts_with("b,h1,h2,h3\n0,"));
        assert_eq!(Policy::from_csv(&csv).unwrap(), sol.policy);
        assert!(Policy::from_csv("b,h1\n1,0\n").is_err());
        assert!(Policy::from_csv("x,h1\n0,0\n").is_err());
        let v = sol.values.to_csv();
        assert_eq!(v.lines().count(), 17);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn solvers_agree_on_random_small_models(
            weights in proptest::collection::vec(0.01f64..1.0, 3..8),
            max_frac in 0.0f64..1.0,
            w in 0.05f64..200.0,
            beta in 0.0f64..0.97,
            k in 1usize..4,
        ) {
            let total: f64 = weights.iter().sum();
            let pmf: Vec<f64> = weights.iter().map(|x| x / total).collect();
            let queue_size = pmf.len() - 1;
            let max_action = 1 + (max_frac * (queue_size - 1) as f64) as usize;
            let channel = build_fsmc(&ChannelParams {
                average_snr: 2.0,
                doppler_hz: 5.0,
                epoch_seconds: 1e-3,
                num_states: k,
            }).unwrap();
            let m = SystemModel::new(SystemConfig {
                queue_size,
                max_action,
                weight: w,
                ber_constraint: 1e-2,
                discount: beta,
                arrivals: ArrivalDist::new(pmf).unwrap(),
                channel,
                packet_bits: None,
            });
            let m = match m { Ok(m) => m, Err(_) => return Ok(()) };
            let dp = value_iteration(&m, 1e-6, None).unwrap();
            for alg in [Algorithm::MpiSubmodular, Algorithm::MpiLNatural] {
                let other = solve(&m, alg, &SolveOptions::with_epsilon(1e-6)).unwrap();
                prop_assert_eq!(&other.policy, &dp.policy);
                prop_assert!(other.values.sup_distance(&dp.values) <= 1e-5);
            }
        }
    }
}
