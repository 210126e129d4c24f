//! Executable structural checks on policies, value functions and channel
//! matrices, and the threshold encoding of monotone policies.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::channel::validate_stochastic;
use crate::error::{Error, Result};
use crate::mdp::{transmission_cost, SystemConfig, SystemModel};
use crate::solvers::{Policy, ValueFunction};

/// Absolute slack allowed in every structural inequality.
pub const STRUCTURE_TOLERANCE: f64 = 1e-9;

/// Row-sum tolerance for matrices handed to the dominance check.
const INPUT_ROW_TOLERANCE: f64 = 1e-9;

/// A witness type that can be written as a CSV row.
pub trait WitnessRow {
    const HEADER: &'static str;
    fn write_fields(&self, out: &mut String);
}

/// Result of one checker: `ok` iff `witnesses` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check<W> {
    pub ok: bool,
    pub witnesses: Vec<W>,
}

impl<W> Check<W> {
    fn from_witnesses(witnesses: Vec<W>) -> Self {
        Self {
            ok: witnesses.is_empty(),
            witnesses,
        }
    }
}

impl<W: WitnessRow> Check<W> {
    pub fn witnesses_csv(&self) -> String {
        let mut out = format!("{}\n", W::HEADER);
        for w in &self.witnesses {
            w.write_fields(&mut out);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Cell {
    pub b: usize,
    pub h: usize,
}

impl WitnessRow for Cell {
    const HEADER: &'static str = "b,h";
    fn write_fields(&self, out: &mut String) {
        let _ = write!(out, "{},{}", self.b, self.h);
    }
}

/// Row `next` has a larger CDF than row `row` at state `at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfCrossing {
    pub row: usize,
    pub next: usize,
    pub at: usize,
    pub excess: f64,
}

impl WitnessRow for CdfCrossing {
    const HEADER: &'static str = "row,next,at,excess";
    fn write_fields(&self, out: &mut String) {
        let _ = write!(out, "{},{},{},{:e}", self.row, self.next, self.at, self.excess);
    }
}

/// Base point of a violated cross-difference inequality in `Q(b, h, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QViolation {
    pub pair: &'static str,
    pub b: usize,
    pub h: usize,
    pub a: usize,
    pub deficit: f64,
}

impl WitnessRow for QViolation {
    const HEADER: &'static str = "pair,b,h,a,deficit";
    fn write_fields(&self, out: &mut String) {
        let _ = write!(out, "{},{},{},{},{:e}", self.pair, self.b, self.h, self.a, self.deficit);
    }
}

/// Cells where `θ(b + 1, h) < θ(b, h)`, reported at `(b, h)`.
pub fn check_monotone_b(policy: &Policy) -> Check<Cell> {
    let mut w = Vec::new();
    for h in 0..policy.num_channel_states() {
        for b in 0..policy.num_queue_states().saturating_sub(1) {
            if policy.get(b + 1, h) < policy.get(b, h) {
                w.push(Cell { b, h });
            }
        }
    }
    Check::from_witnesses(w)
}

/// Cells where `θ(b + 1, h) > θ(b, h) + 1`, reported at `(b, h)`.
pub fn check_bounded_marginal(policy: &Policy) -> Check<Cell> {
    let mut w = Vec::new();
    for h in 0..policy.num_channel_states() {
        for b in 0..policy.num_queue_states().saturating_sub(1) {
            if policy.get(b + 1, h) > policy.get(b, h) + 1 {
                w.push(Cell { b, h });
            }
        }
    }
    Check::from_witnesses(w)
}

/// Cells where `θ(b, h + 1) < θ(b, h)`, reported at `(b, h)`.
pub fn check_monotone_h(policy: &Policy) -> Check<Cell> {
    let mut w = Vec::new();
    for b in 0..policy.num_queue_states() {
        for h in 0..policy.num_channel_states().saturating_sub(1) {
            if policy.get(b, h + 1) < policy.get(b, h) {
                w.push(Cell { b, h });
            }
        }
    }
    Check::from_witnesses(w)
}

/// CDF criterion for first-order stochastic dominance between consecutive
/// rows.
pub fn check_first_order_dominance(matrix: &[Vec<f64>]) -> Result<Check<CdfCrossing>> {
    validate_stochastic(matrix, INPUT_ROW_TOLERANCE)?;
    let cdfs: Vec<Vec<f64>> = matrix
        .iter()
        .map(|row| {
            row.iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let mut w = Vec::new();
    for h in 0..cdfs.len().saturating_sub(1) {
        for j in 0..cdfs[h].len().saturating_sub(1) {
            let excess = cdfs[h + 1][j] - cdfs[h][j];
            if excess > STRUCTURE_TOLERANCE {
                w.push(CdfCrossing {
                    row: h,
                    next: h + 1,
                    at: j,
                    excess,
                });
            }
        }
    }
    Ok(Check::from_witnesses(w))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelConditionReport {
    pub weight: f64,
    /// `min_h` of the closed-form weight bound; `None` for a single state.
    pub corollary1_bound: Option<f64>,
    /// `corollary1_bound - weight`.
    pub corollary1_margin: Option<f64>,
    pub corollary1_ok: bool,
    /// `min_{h,a}` of `c_tr(h+1,a) + c_tr(h,a+1) - c_tr(h,a) - c_tr(h+1,a+1)`.
    pub eq_slack_min: Option<f64>,
    pub eq_slack_argmin: Option<(usize, usize)>,
    pub eq_margin: Option<f64>,
    pub eq_ok: bool,
}

/// Weight bounds under which the transmission cost keeps `Q` submodular in
/// `(h, a)`. The closed-form bound uses the `a = 1` factor; the direct slack
/// ranges over every `a` in `0..A_m`.
pub fn check_corollary1(config: &SystemConfig) -> ChannelConditionReport {
    let snr = config.channel.cost_snr();
    let k = snr.len();
    let ber = config.ber_constraint;
    let coef = -(5.0 * ber).ln() / 1.5;
    let mut bound: Option<f64> = None;
    let mut slack: Option<(f64, (usize, usize))> = None;
    for h in 0..k.saturating_sub(1) {
        let rhs = 2.0 * coef * (1.0 / snr[h] - 1.0 / snr[h + 1]);
        bound = Some(bound.map_or(rhs, |m: f64| m.min(rhs)));
        for a in 0..config.max_action {
            let c = |h: usize, a: usize| transmission_cost(a, snr[h], ber);
            let s = c(h + 1, a) + c(h, a + 1) - c(h, a) - c(h + 1, a + 1);
            if slack.map_or(true, |(m, _)| s < m) {
                slack = Some((s, (h, a)));
            }
        }
    }
    let w = config.weight;
    ChannelConditionReport {
        weight: w,
        corollary1_bound: bound,
        corollary1_margin: bound.map(|m| m - w),
        corollary1_ok: bound.map_or(true, |m| w <= m),
        eq_slack_min: slack.map(|s| s.0),
        eq_slack_argmin: slack.map(|s| s.1),
        eq_margin: slack.map(|s| s.0 - w),
        eq_ok: slack.map_or(true, |s| w <= s.0),
    }
}

/// Full `Q(b, h, a)` table computed from `values`.
pub fn q_table(model: &SystemModel, values: &ValueFunction) -> Vec<Vec<Vec<f64>>> {
    let num_h = model.num_channel_states();
    let p = model.channel().transition();
    let expected: Vec<Vec<f64>> = (0..num_h)
        .map(|h| {
            (0..model.num_queue_states())
                .map(|b2| (0..num_h).map(|h2| p[h][h2] * values.get(b2, h2)).sum())
                .collect()
        })
        .collect();
    (0..model.num_queue_states())
        .map(|b| {
            (0..num_h)
                .map(|h| {
                    (0..model.num_actions())
                        .map(|a| {
                            let cont: f64 = model
                                .queue_row_sparse(b, a)
                                .iter()
                                .map(|&(b2, pb)| pb * expected[h][b2])
                                .sum();
                            model.immediate_cost(b, h, a) + model.discount() * cont
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Submodularity of `Q` in `(b, h, a)`: for every pair of distinct
/// coordinates, `Q(x + e_i) + Q(x + e_j) >= Q(x) + Q(x + e_i + e_j)`.
pub fn check_q_submodular(model: &SystemModel, values: &ValueFunction) -> Check<QViolation> {
    let q = q_table(model, values);
    let (nb, nh, na) = (model.num_queue_states(), model.num_channel_states(), model.num_actions());
    let mut w = Vec::new();
    let mut test = |pair: &'static str, b: usize, h: usize, a: usize, lhs: f64, rhs: f64| {
        let deficit = rhs - lhs;
        if deficit > STRUCTURE_TOLERANCE {
            w.push(QViolation { pair, b, h, a, deficit });
        }
    };
    for b in 0..nb {
        for h in 0..nh {
            for a in 0..na {
                let base = q[b][h][a];
                if b + 1 < nb && h + 1 < nh {
                    test("b,h", b, h, a, q[b + 1][h][a] + q[b][h + 1][a], base + q[b + 1][h + 1][a]);
                }
                if b + 1 < nb && a + 1 < na {
                    test("b,a", b, h, a, q[b + 1][h][a] + q[b][h][a + 1], base + q[b + 1][h][a + 1]);
                }
                if h + 1 < nh && a + 1 < na {
                    test("h,a", b, h, a, q[b][h + 1][a] + q[b][h][a + 1], base + q[b][h + 1][a + 1]);
                }
            }
        }
    }
    Check::from_witnesses(w)
}

/// L♮-convexity of `Q` in `(b, a)` for each `h`, through submodularity of
/// `(b, a, ζ) ↦ Q(b - ζ, a - ζ)`.
pub fn check_q_lnatural(model: &SystemModel, values: &ValueFunction) -> Check<QViolation> {
    let q = q_table(model, values);
    let (nb, nh, na) = (model.num_queue_states(), model.num_channel_states(), model.num_actions());
    let mut w = Vec::new();
    let mut test = |pair: &'static str, b: usize, h: usize, a: usize, lhs: f64, rhs: f64| {
        let deficit = rhs - lhs;
        if deficit > STRUCTURE_TOLERANCE {
            w.push(QViolation { pair, b, h, a, deficit });
        }
    };
    for h in 0..nh {
        for b in 0..nb {
            for a in 0..na {
                let base = q[b][h][a];
                if b + 1 < nb && a + 1 < na {
                    test("b,a", b, h, a, q[b + 1][h][a] + q[b][h][a + 1], base + q[b + 1][h][a + 1]);
                }
                if b + 1 < nb && b >= 1 && a >= 1 {
                    test("b,z", b, h, a, q[b + 1][h][a] + q[b - 1][h][a - 1], base + q[b][h][a - 1]);
                }
                if a + 1 < na && b >= 1 && a >= 1 {
                    test("a,z", b, h, a, q[b][h][a + 1] + q[b - 1][h][a - 1], base + q[b - 1][h][a]);
                }
            }
        }
    }
    Check::from_witnesses(w)
}

/// `|H| × A_m` table of queue thresholds. `get(h, i)` is the smallest queue
/// state at which action `i` (or more) is taken in channel state `h`;
/// `L_B + 1` means never.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThresholdVector {
    queue_size: usize,
    num_h: usize,
    max_action: usize,
    values: Vec<usize>,
}

impl ThresholdVector {
    pub fn new(queue_size: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let max_action = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || max_action == 0 || rows.iter().any(|r| r.len() != max_action) {
            return Err(Error::Dimension("threshold rows must be non-empty and equal length".into()));
        }
        Self::from_flat(queue_size, rows.len(), max_action, rows.concat())
    }

    /// Row-major in `h`, then action `1..=A_m`.
    pub fn from_flat(
        queue_size: usize,
        num_h: usize,
        max_action: usize,
        values: Vec<usize>,
    ) -> Result<Self> {
        if values.len() != num_h * max_action {
            return Err(Error::Dimension(format!(
                "{} thresholds for a {num_h}x{max_action} table",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > queue_size + 1) {
            return Err(Error::Dimension(format!(
                "threshold {v} outside 0..={}",
                queue_size + 1
            )));
        }
        Ok(Self {
            queue_size,
            num_h,
            max_action,
            values,
        })
    }

    pub fn filled(queue_size: usize, num_h: usize, max_action: usize, value: usize) -> Self {
        Self {
            queue_size,
            num_h,
            max_action,
            values: vec![value.min(queue_size + 1); num_h * max_action],
        }
    }

    pub fn queue_size(&self) -> usize {
        self.queue_size
    }

    pub fn num_channel_states(&self) -> usize {
        self.num_h
    }

    pub fn max_action(&self) -> usize {
        self.max_action
    }

    /// Number of free coordinates, `|H| · A_m`.
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Threshold for action `i` in `1..=A_m`.
    #[inline]
    pub fn get(&self, h: usize, i: usize) -> usize {
        self.values[h * self.max_action + i - 1]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.values.chunks(self.max_action).map(<[usize]>::to_vec).collect()
    }

    /// First `(h, i)` with `Φ_{h,i} > Φ_{h,i+1}`.
    pub fn first_infeasibility(&self) -> Option<(usize, usize)> {
        for (h, row) in self.values.chunks(self.max_action).enumerate() {
            if let Some(i) = row.windows(2).position(|w| w[0] > w[1]) {
                return Some((h, i + 1));
            }
        }
        None
    }

    pub fn is_feasible(&self) -> bool {
        self.first_infeasibility().is_none()
    }

    /// Sorts each row ascending.
    pub fn repaired(&self) -> Self {
        let mut out = self.clone();
        out.values
            .chunks_mut(self.max_action)
            .for_each(<[usize]>::sort_unstable);
        out
    }

    /// Action at `(b, h)`: the largest `i` with `b >= Φ_{h,i}`, else 0. Total
    /// on unsorted rows.
    #[inline]
    pub fn action(&self, b: usize, h: usize) -> usize {
        let row = &self.values[h * self.max_action..(h + 1) * self.max_action];
        row.iter().rposition(|&t| b >= t).map_or(0, |i| i + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h");
        for i in 1..=self.max_action {
            let _ = write!(out, ",a{i}");
        }
        out.push('\n');
        for (h, row) in self.values.chunks(self.max_action).enumerate() {
            let _ = write!(out, "h{}", h + 1);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`ThresholdVector::to_csv`] output. Lines starting with `#`
    /// are ignored.
    pub fn from_csv(text: &str, queue_size: usize) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Dimension("empty threshold CSV".into()))?;
        if !header.starts_with("h,") {
            return Err(Error::Dimension(format!("bad threshold CSV header `{header}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut fields = line.split(',').map(str::trim);
            let label = fields.next().unwrap_or_default();
            if label != format!("h{}", i + 1) {
                return Err(Error::Dimension(format!(
                    "expected row label h{}, found `{label}`",
                    i + 1
                )));
            }
            let row = fields
                .map(|f| {
                    f.parse::<usize>()
                        .map_err(|_| Error::Dimension(format!("bad threshold `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(queue_size, rows)
    }
}

impl Serialize for ThresholdVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            queue_size: usize,
            thresholds: Vec<Vec<usize>>,
        }
        Repr {
            queue_size: self.queue_size,
            thresholds: self.rows(),
        }
        .serialize(s)
    }
}

/// Threshold encoding of a policy that is nondecreasing in `b`.
pub fn policy_to_thresholds(policy: &Policy, max_action: usize) -> Result<ThresholdVector> {
    if let Some(c) = check_monotone_b(policy).witnesses.first() {
        return Err(Error::NonMonotonePolicy { b: c.b, h: c.h });
    }
    if max_action == 0 {
        return Err(Error::Dimension("threshold table needs A_m >= 1".into()));
    }
    let num_b = policy.num_queue_states();
    let num_h = policy.num_channel_states();
    if policy.max_action() > max_action {
        return Err(Error::Dimension(format!(
            "policy uses action {} above A_m = {max_action}",
            policy.max_action()
        )));
    }
    let mut values = Vec::with_capacity(num_h * max_action);
    for h in 0..num_h {
        for i in 1..=max_action {
            values.push((0..num_b).find(|&b| policy.get(b, h) >= i).unwrap_or(num_b));
        }
    }
    ThresholdVector::from_flat(num_b - 1, num_h, max_action, values)
}

/// Monotone policy from feasible thresholds.
pub fn thresholds_to_policy(thresholds: &ThresholdVector) -> Result<Policy> {
    if let Some((h, i)) = thresholds.first_infeasibility() {
        return Err(Error::InfeasibleThresholds { h, i });
    }
    Ok(thresholds_to_policy_lenient(thresholds))
}

/// Like [`thresholds_to_policy`] but accepts unsorted rows.
pub fn thresholds_to_policy_lenient(thresholds: &ThresholdVector) -> Policy {
    Policy::from_fn(thresholds.queue_size + 1, thresholds.num_h, |b, h| {
        thresholds.action(b, h)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub property: &'static str,
    pub b: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub monotone_in_b: bool,
    pub bounded_marginal: bool,
    pub monotone_in_h: bool,
    pub violations: Vec<Violation>,
    pub corollary1_margin: Option<f64>,
    pub channel_conditions: ChannelConditionReport,
    pub dominance_ok: bool,
    pub dominance_witnesses: Vec<CdfCrossing>,
    pub slow_fading: bool,
    pub q_submodular: Option<bool>,
    pub q_lnatural: Option<bool>,
}

impl StructureReport {
    /// Runs every checker; the `Q` checks only when `values` is given.
    pub fn build(model: &SystemModel, policy: &Policy, values: Option<&ValueFunction>) -> Self {
        let mut violations = Vec::new();
        let mut add = |property: &'static str, check: Check<Cell>| {
            violations.extend(check.witnesses.into_iter().map(|c| Violation {
                property,
                b: c.b,
                h: c.h,
            }));
            check.ok
        };
        let monotone_in_b = add("monotone_b", check_monotone_b(policy));
        let bounded_marginal = add("bounded_marginal", check_bounded_marginal(policy));
        let monotone_in_h = add("monotone_h", check_monotone_h(policy));
        let conditions = check_corollary1(model.config());
        let dominance = check_first_order_dominance(model.channel().transition())
            .expect("model channels are validated stochastic");
        Self {
            monotone_in_b,
            bounded_marginal,
            monotone_in_h,
            violations,
            corollary1_margin: conditions.corollary1_margin,
            channel_conditions: conditions,
            dominance_ok: dominance.ok,
            dominance_witnesses: dominance.witnesses,
            slow_fading: !model.channel().report().slow_fading_violated,
            q_submodular: values.map(|v| check_q_submodular(model, v).ok),
            q_lnatural: values.map(|v| check_q_lnatural(model, v).ok),
        }
    }

    /// Both halves of the unconditional unit-step monotonicity claim.
    pub fn unconditional_ok(&self) -> bool {
        self.monotone_in_b && self.bounded_marginal
    }

    pub fn violations_csv(&self) -> String {
        let mut out = String::from("property,b,h\n");
        for v in &self.violations {
            let _ = writeln!(out, "{},{},{}", v.property, v.b, v.h);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_fsmc, ChannelParams};
    use crate::mdp::{make_poisson_arrivals, SystemConfig, Truncation};
    use crate::solvers::{value_iteration, DEFAULT_EPSILON};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fig_config(weight: f64) -> SystemConfig {
        SystemConfig {
            queue_size: 15,
            max_action: 5,
            weight,
            ber_constraint: 1e-3,
            discount: 0.95,
            arrivals: make_poisson_arrivals(3.0, 15, Truncation::Renormalize).unwrap(),
            channel: build_fsmc(&ChannelParams {
                average_snr: 1.0,
                doppler_hz: 10.0,
                epoch_seconds: 1e-3,
                num_states: 8,
            })
            .unwrap(),
            packet_bits: None,
        }
    }

    fn solved(weight: f64) -> (SystemModel, crate::solvers::Solution) {
        let m = SystemModel::new(fig_config(weight)).unwrap();
        let s = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
        (m, s)
    }

    fn policy(rows: &[&[usize]]) -> Policy {
        Policy::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hand_built_policies() {
        assert!(check_monotone_b(&Policy::constant(5, 3, 2)).ok);
        assert!(check_bounded_marginal(&Policy::constant(5, 3, 2)).ok);

        let mut p = Policy::constant(5, 2, 0);
        p.set(2, 1, 3);
        p.set(3, 1, 2);
        p.set(4, 1, 3);
        let c = check_monotone_b(&p);
        assert!(!c.ok);
        assert_eq!(c.witnesses, vec![Cell { b: 2, h: 1 }]);
        assert_eq!(c.witnesses_csv(), "b,h\n2,1\n");

        let jump = policy(&[&[0], &[2]]);
        assert!(check_monotone_b(&jump).ok);
        let c = check_bounded_marginal(&jump);
        assert_eq!(c.witnesses, vec![Cell { b: 0, h: 0 }]);

        let dip = policy(&[&[1, 0]]);
        assert_eq!(check_monotone_h(&dip).witnesses, vec![Cell { b: 0, h: 0 }]);
    }

    #[test]
    fn dominance_examples() {
        let id: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        assert!(check_first_order_dominance(&id).unwrap().ok);

        let mut p = fig_config(1.0).channel.transition().to_vec();
        p[6] = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        p[7] = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let c = check_first_order_dominance(&p).unwrap();
        assert!(!c.ok);
        assert!(c.witnesses.iter().all(|w| w.row == 6));

        assert!(check_first_order_dominance(&[vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn dominance_agrees_with_expectation_criterion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let k = rng.random_range(2..6);
            let p: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let raw: Vec<f64> = (0..k)
                        .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() })
                        .collect();
                    let s: f64 = raw.iter().sum();
                    if s == 0.0 {
                        let mut e = vec![0.0; k];
                        e[trial % k] = 1.0;
                        e
                    } else {
                        raw.iter().map(|x| x / s).collect()
                    }
                })
                .collect();
            let cdf = check_first_order_dominance(&p).unwrap().ok;
            let mut sampled = true;
            for _ in 0..1000 {
                let mut u = vec![0.0; k];
                let mut acc = 0.0;
                for x in u.iter_mut() {
                    // Mix of smooth increments and unit steps at random cuts.
                    acc += if rng.random_bool(0.5) { rng.random::<f64>() } else { 0.0 };
                    *x = acc;
                }
                for h in 0..k - 1 {
                    let e0: f64 = p[h].iter().zip(&u).map(|(a, b)| a * b).sum();
                    let e1: f64 = p[h + 1].iter().zip(&u).map(|(a, b)| a * b).sum();
                    if e1 < e0 - 1e-9 {
                        sampled = false;
                    }
                }
            }
            // Step functions at every cut make the sampled test exact.
            for h in 0..k - 1 {
                for cut in 1..k {
                    let e0: f64 = p[h][cut..].iter().sum();
                    let e1: f64 = p[h + 1][cut..].iter().sum();
                    if e1 < e0 - 1e-9 {
                        sampled = false;
                    }
                }
            }
            assert_eq!(cdf, sampled, "trial {trial}: {p:?}");
        }
    }

    #[test]
    fn corollary1_examples() {
        let tiny = check_corollary1(&fig_config(1e-9));
        assert!(tiny.corollary1_ok && tiny.eq_ok);
        let fig3 = check_corollary1(&fig_config(1.0));
        assert!(fig3.corollary1_ok);
        assert!(fig3.corollary1_margin.unwrap() > 0.0);
        // The a = 0 term has half the closed-form factor.
        let slack = fig3.eq_slack_min.unwrap();
        assert!((2.0 * slack - fig3.corollary1_bound.unwrap()).abs() < 1e-12);
        assert_eq!(fig3.eq_slack_argmin.map(|x| x.1), Some(0));
        let fig4 = check_corollary1(&fig_config(400.0));
        assert!(!fig4.eq_ok && !fig4.corollary1_ok);
    }

    #[test]
    fn fig3_structure() {
        let (m, s) = solved(1.0);
        let r = StructureReport::build(&m, &s.policy, Some(&s.values));
        assert!(r.monotone_in_b && r.bounded_marginal && r.monotone_in_h);
        assert!(r.violations.is_empty());
        assert!(r.dominance_ok);
        assert_eq!(r.q_lnatural, Some(true));
        let sub = check_q_submodular(&m, &s.values);
        assert!(sub.ok, "{:?}", &sub.witnesses[..sub.witnesses.len().min(5)]);
    }

    #[test]
    fn fig4_structure() {
        let (m, s) = solved(400.0);
        let r = StructureReport::build(&m, &s.policy, Some(&s.values));
        assert!(r.unconditional_ok());
        assert!(!r.channel_conditions.eq_ok);
        assert_eq!(r.q_lnatural, Some(true));
        let sub = check_q_submodular(&m, &s.values);
        assert!(!sub.ok);
        assert!(sub.witnesses.iter().any(|w| w.pair == "h,a"));
    }

    #[test]
    fn fig5_structure() {
        let mut cfg = fig_config(1.0);
        let mut p = cfg.channel.transition().to_vec();
        p[6] = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        p[7] = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        cfg.channel = cfg.channel.with_transition(p).unwrap();
        let m = SystemModel::new(cfg).unwrap();
        let s = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
        let r = StructureReport::build(&m, &s.policy, None);
        assert!(r.unconditional_ok());
        assert!(!r.dominance_ok);
        assert!(r.channel_conditions.corollary1_ok);
    }

    #[test]
    fn lnatural_holds_for_transmission_cost_alone() {
        let cfg = fig_config(1e-9);
        let m = SystemModel::new(cfg).unwrap();
        let zero = ValueFunction::zeros(16, 8);
        assert!(check_q_lnatural(&m, &zero).ok);
    }

    #[test]
    fn threshold_examples() {
        let zero = policy_to_thresholds(&Policy::constant(16, 8, 0), 5).unwrap();
        assert!(zero.as_slice().iter().all(|&t| t == 16));

        let all = ThresholdVector::filled(15, 2, 5, 0);
        let p = thresholds_to_policy(&all).unwrap();
        assert_eq!(p, Policy::constant(16, 2, 5));
        let never = ThresholdVector::filled(15, 2, 5, 16);
        assert_eq!(thresholds_to_policy(&never).unwrap(), Policy::constant(16, 2, 0));

        let t = ThresholdVector::new(6, vec![vec![1, 3, 3, 7]]).unwrap();
        let p = thresholds_to_policy(&t).unwrap();
        let col: Vec<usize> = (0..7).map(|b| p.get(b, 0)).collect();
        assert_eq!(col, vec![0, 1, 1, 3, 3, 3, 3]);

        let bad = ThresholdVector::new(6, vec![vec![3, 1]]).unwrap();
        assert_eq!(
            thresholds_to_policy(&bad).unwrap_err(),
            Error::InfeasibleThresholds { h: 0, i: 1 }
        );
        let lenient = thresholds_to_policy_lenient(&bad);
        assert_eq!(lenient.get(1, 0), 2);
        assert_eq!(lenient.get(0, 0), 0);
        assert_eq!(bad.repaired().rows(), vec![vec![1, 3]]);
        assert!(ThresholdVector::new(6, vec![vec![8]]).is_err());

        let mut skip = Policy::constant(3, 1, 0);
        skip.set(2, 0, 2);
        let t = policy_to_thresholds(&skip, 2).unwrap();
        assert_eq!(t.rows(), vec![vec![2, 2]]);
        assert!(policy_to_thresholds(&policy(&[&[1], &[0]]), 1).is_err());
    }

    #[test]
    fn fig3_thresholds_staircase() {
        let (_, s) = solved(1.0);
        let t = policy_to_thresholds(&s.policy, 5).unwrap();
        assert!(t.is_feasible());
        for i in 1..=5 {
            for h in 0..7 {
                assert!(t.get(h + 1, i) <= t.get(h, i));
            }
        }
        assert_eq!(thresholds_to_policy(&t).unwrap(), s.policy);
        let csv = t.to_csv();
        assert_eq!(ThresholdVector::from_csv(&csv, 15).unwrap(), t);
    }

    fn monotone_policy() -> impl Strategy<Value = (Policy, usize)> {
        (1usize..7, 1usize..5, 1usize..5).prop_flat_map(|(nb, nh, am)| {
            proptest::collection::vec(proptest::collection::vec(0..=am, nb), nh).prop_map(
                move |mut cols| {
                    cols.iter_mut().for_each(|c| c.sort_unstable());
                    (Policy::from_fn(nb, nh, |b, h| cols[h][b]), am)
                },
            )
        })
    }

    proptest! {
        #[test]
        fn thresholds_round_trip((p, am) in monotone_policy()) {
            let t = policy_to_thresholds(&p, am).unwrap();
            prop_assert!(t.is_feasible());
            let back = thresholds_to_policy(&t).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(policy_to_thresholds(&back, am).unwrap(), t);
        }

        #[test]
        fn decoded_policies_are_monotone(
            rows in proptest::collection::vec(proptest::collection::vec(0usize..=9, 3), 1..4),
        ) {
            let t = ThresholdVector::new(8, rows).unwrap();
            prop_assert!(check_monotone_b(&thresholds_to_policy_lenient(&t)).ok);
            let r = t.repaired();
            prop_assert!(r.is_feasible());
            if t.is_feasible() {
                prop_assert_eq!(&r, &t);
            }
            prop_assert!(check_monotone_b(&thresholds_to_policy(&r).unwrap()).ok);
        }
    }
}
