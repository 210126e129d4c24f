//! Discrete simultaneous perturbation stochastic approximation over
//! threshold vectors, with an augmented Lagrangian for the sorted-row
//! constraint.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(seed, iteration, purpose)`, so a run is a pure function of its inputs.

use std::fmt::Write as _;

use rand::distr::{Distribution, StandardUniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{queue_next, SystemModel};
use crate::solvers::policy_objective;
use crate::structure::{thresholds_to_policy, ThresholdVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspsaConfig {
    /// Step-size numerator `A` in `a_n = A / (B + n)^α1`.
    #[serde(rename = "A")]
    pub step_scale: f64,
    /// Step-size offset `B`.
    #[serde(rename = "B")]
    pub step_offset: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Penalty scale `R` in `r_n = R n^α2`.
    #[serde(rename = "R")]
    pub penalty_scale: f64,
    pub iterations: usize,
    pub seed: u64,
    pub sim_tolerance: f64,
    pub sim_patience: usize,
    /// Share trajectory randomness between the two simulations of one
    /// gradient estimate.
    pub common_random_numbers: bool,
}

impl Default for DspsaConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.015,
            step_offset: 100.0,
            alpha1: 0.602,
            alpha2: 0.1,
            penalty_scale: 10.0,
            iterations: 5000,
            seed: 0,
            sim_tolerance: 1e-4,
            sim_patience: 10,
            common_random_numbers: true,
        }
    }
}

impl DspsaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_owned(),
            })
        };
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return bad("A", "must be positive");
        }
        if !(self.step_offset > 0.0 && self.step_offset.is_finite()) {
            return bad("B", "must be positive");
        }
        if !(self.penalty_scale > 0.0 && self.penalty_scale.is_finite()) {
            return bad("R", "must be positive");
        }
        if !(self.alpha1 > 0.0 && self.alpha1 <= 1.0) {
            return bad("alpha1", "must lie in (0, 1]");
        }
        if !(self.alpha2 >= 0.0 && self.alpha2.is_finite()) {
            return bad("alpha2", "must be non-negative");
        }
        if !(self.sim_tolerance > 0.0 && self.sim_tolerance.is_finite()) {
            return bad("sim_tolerance", "must be positive");
        }
        if self.sim_patience == 0 {
            return bad("sim_patience", "must be at least 1");
        }
        Ok(())
    }

    /// `a_n`.
    pub fn step_size(&self, n: usize) -> f64 {
        self.step_scale / (self.step_offset + n as f64).powf(self.alpha1)
    }

    /// `r_n`.
    pub fn penalty(&self, n: usize) -> f64 {
        self.penalty_scale * (n as f64).powf(self.alpha2)
    }

    pub fn sim_controls(&self) -> SimControls {
        SimControls {
            tolerance: self.sim_tolerance,
            patience: self.sim_patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimControls {
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for SimControls {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            patience: 10,
        }
    }
}

/// Hard cap on simulated epochs: past it the discounted tail is below
/// `tolerance`.
pub fn trajectory_cap(model: &SystemModel, tolerance: f64) -> usize {
    let beta = model.discount();
    let c_max = model.max_cost();
    let raw = ((tolerance * (1.0 - beta) / c_max).ln() / beta.ln()).ceil();
    if raw.is_finite() && raw > 1.0 {
        raw as usize
    } else {
        1
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `parts`.
pub fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5151_7A3D_u64, |acc, &p| mix(acc ^ mix(p)))
}

const TAG_DELTA: u64 = 1;
const TAG_TRAJECTORY: u64 = 2;

/// Trajectory simulator for the discounted cost of a threshold policy.
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    model: &'m SystemModel,
    arrival_cdf: Vec<f64>,
    controls: SimControls,
    cap: usize,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m SystemModel, controls: SimControls) -> Self {
        let arrival_cdf = model
            .config()
            .arrivals
            .pmf()
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Self {
            model,
            arrival_cdf,
            cap: trajectory_cap(model, controls.tolerance),
            controls,
        }
    }

    pub fn epoch_cap(&self) -> usize {
        self.cap
    }

    fn sample_arrivals(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = StandardUniform.sample(rng);
        self.arrival_cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.arrival_cdf.len() - 1)
    }

    /// Discounted cost of one trajectory from `(b, h)`.
    pub fn trajectory(&self, thresholds: &ThresholdVector, b: usize, h: usize, rng: &mut ChaCha8Rng) -> f64 {
        let m = self.model;
        let beta = m.discount();
        let (mut b, mut h) = (b, h);
        let mut weight = 1.0;
        let mut total = 0.0;
        let mut quiet = 0;
        for t in 0..self.cap {
            let a = thresholds.action(b, h);
            let inc = weight * m.immediate_cost(b, h, a);
            total += inc;
            if inc < self.controls.tolerance {
                quiet += 1;
                if quiet >= self.controls.patience {
                    break;
                }
            } else {
                quiet = 0;
            }
            if t + 1 == self.cap {
                break;
            }
            let f = self.sample_arrivals(rng);
            b = queue_next(b, a, f, m.queue_size());
            h = m.channel().sample_unchecked(h, rng);
            weight *= beta;
        }
        total
    }

    /// `Ĵ(Φ)`: one trajectory per initial state, summed in state order. The
    /// stream for state `x` is keyed by `(key, x)`.
    pub fn j_hat(&self, thresholds: &ThresholdVector, key: u64) -> f64 {
        let m = self.model;
        let mut total = 0.0;
        for x in 0..m.num_states() {
            let s = m.state(x);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[key, x as u64]));
            total += self.trajectory(thresholds, s.b, s.h, &mut rng);
        }
        total
    }
}

/// Noisy estimate of `J(Φ) = Σ_x V_Φ(x)`. Rows of `thresholds` need not be
/// sorted.
pub fn simulate_j_hat(
    model: &SystemModel,
    thresholds: &ThresholdVector,
    seed: u64,
    controls: SimControls,
) -> f64 {
    Simulator::new(model, controls).j_hat(thresholds, seed)
}

/// Draws `Δ ∈ {-1, +1}^D` with independent fair signs.
pub fn draw_perturbation<R: Rng + ?Sized>(dimension: usize, rng: &mut R) -> Vec<i8> {
    (0..dimension)
        .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
        .collect()
}

/// Two-point lattice gradient for a given perturbation:
/// `g_d = (J(z + (1 + Δ)/2) - J(z + (1 - Δ)/2)) Δ_d`. Returns `(g, J⁺, J⁻)`.
pub fn perturbation_gradient(
    base: &[usize],
    delta: &[i8],
    mut objective: impl FnMut(&[usize], Side) -> f64,
) -> (Vec<f64>, f64, f64) {
    let plus: Vec<usize> = base
        .iter()
        .zip(delta)
        .map(|(&z, &d)| if d > 0 { z + 1 } else { z })
        .collect();
    let minus: Vec<usize> = base
        .iter()
        .zip(delta)
        .map(|(&z, &d)| if d > 0 { z } else { z + 1 })
        .collect();
    let j_plus = objective(&plus, Side::Plus);
    let j_minus = objective(&minus, Side::Minus);
    let diff = j_plus - j_minus;
    let g = delta.iter().map(|&d| diff * f64::from(d)).collect();
    (g, j_plus, j_minus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub gradient: Vec<f64>,
    pub delta: Vec<i8>,
    pub j_plus: f64,
    pub j_minus: f64,
}

/// `⌊Θ̃⌋` as a lattice point in `[0, L_B + 1]`.
fn floor_point(theta: &[f64], limit: usize) -> Vec<usize> {
    theta
        .iter()
        .map(|&t| (t.floor().max(0.0) as usize).min(limit))
        .collect()
}

fn clamp_point(point: &[usize], limit: usize) -> Vec<usize> {
    point.iter().map(|&v| v.min(limit)).collect()
}

/// One DSPSA gradient estimate at `theta` using two simulations.
pub fn dspsa_gradient(
    model: &SystemModel,
    theta: &[f64],
    max_action: usize,
    seed: u64,
    iteration: usize,
    config: &DspsaConfig,
) -> GradientSample {
    let sim = Simulator::new(model, config.sim_controls());
    gradient_with(&sim, theta, max_action, seed, iteration, config.common_random_numbers)
}

fn gradient_with(
    sim: &Simulator<'_>,
    theta: &[f64],
    max_action: usize,
    seed: u64,
    iteration: usize,
    common: bool,
) -> GradientSample {
    let model = sim.model;
    let limit = model.queue_size() + 1;
    let num_h = model.num_channel_states();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, iteration as u64, TAG_DELTA]));
    let delta = draw_perturbation(theta.len(), &mut rng);
    let base = floor_point(theta, limit);
    let (gradient, j_plus, j_minus) = perturbation_gradient(&base, &delta, |point, side| {
        let t = ThresholdVector::from_flat(model.queue_size(), num_h, max_action, clamp_point(point, limit))
            .expect("clamped point lies in the box");
        let side_tag = match (common, side) {
            (true, _) | (false, Side::Plus) => 0,
            (false, Side::Minus) => 1,
        };
        sim.j_hat(&t, stream_seed(&[seed, iteration as u64, TAG_TRAJECTORY, side_tag]))
    });
    GradientSample {
        gradient,
        delta,
        j_plus,
        j_minus,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DspsaState {
    pub theta_tilde: Vec<f64>,
    /// `λ_{h,i}` for `i` in `1..A_m`, row-major in `h`.
    pub lambda: Vec<f64>,
    pub iteration: usize,
    pub queue_size: usize,
    pub num_channel_states: usize,
    pub max_action: usize,
}

impl DspsaState {
    /// `Θ̃ = 0`, `λ = 0`.
    pub fn initial(queue_size: usize, num_channel_states: usize, max_action: usize) -> Self {
        Self {
            theta_tilde: vec![0.0; num_channel_states * max_action],
            lambda: vec![0.0; num_channel_states * max_action.saturating_sub(1)],
            iteration: 0,
            queue_size,
            num_channel_states,
            max_action,
        }
    }

    pub fn for_model(model: &SystemModel) -> Self {
        Self::initial(model.queue_size(), model.num_channel_states(), model.max_action())
    }

    /// Nearest-integer projection of `Θ̃` with each row sorted.
    pub fn estimate(&self) -> ThresholdVector {
        let limit = self.queue_size + 1;
        let values = self
            .theta_tilde
            .iter()
            .map(|&t| (t.round().max(0.0) as usize).min(limit))
            .collect();
        ThresholdVector::from_flat(self.queue_size, self.num_channel_states, self.max_action, values)
            .expect("rounded estimate lies in the box")
            .repaired()
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambda.iter().copied().fold(0.0, f64::max)
    }

    /// `‖Θ̃ - Φ*‖ / ‖Θ̃⁽⁰⁾ - Φ*‖` with `Θ̃⁽⁰⁾ = 0`.
    pub fn normalized_error(&self, reference: &ThresholdVector) -> Option<f64> {
        let r = reference.as_slice();
        if r.len() != self.theta_tilde.len() {
            return None;
        }
        let denom = r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if denom == 0.0 {
            return None;
        }
        let num = self
            .theta_tilde
            .iter()
            .zip(r)
            .map(|(&t, &v)| (t - v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        Some(num / denom)
    }

    fn check_model(&self, model: &SystemModel) -> Result<()> {
        if model.queue_size() != self.queue_size
            || model.num_channel_states() != self.num_channel_states
            || model.max_action() != self.max_action
        {
            return Err(Error::Dimension(format!(
                "state is for L_B = {}, K = {}, A_m = {}; model has L_B = {}, K = {}, A_m = {}",
                self.queue_size,
                self.num_channel_states,
                self.max_action,
                model.queue_size(),
                model.num_channel_states(),
                model.max_action()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub a_n: f64,
    pub r_n: f64,
    /// Exact `J` of the rounded, repaired estimate.
    pub j_rounded: f64,
    pub normalized_error: Option<f64>,
    pub max_lambda: f64,
    pub clamp_flag: bool,
}

pub const TRACE_CSV_HEADER: &str = "n,a_n,r_n,J_rounded,normalized_error,max_lambda,clamp_flag";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_CSV_HEADER}\n");
    for r in rows {
        let err = r.normalized_error.map_or(String::new(), |e| format!("{e:.17e}"));
        let _ = writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{},{:.17e},{}",
            r.n,
            r.a_n,
            r.r_n,
            r.j_rounded,
            err,
            r.max_lambda,
            u8::from(r.clamp_flag)
        );
    }
    out
}

/// Iteration driver. Holds the state between calls so a run can switch
/// models or schedules part way through.
#[derive(Debug, Clone)]
pub struct Dspsa {
    pub config: DspsaConfig,
    pub state: DspsaState,
    clamp_iterations: usize,
    last_eval: Option<(ThresholdVector, f64)>,
}

impl Dspsa {
    pub fn new(model: &SystemModel, config: DspsaConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: DspsaState::for_model(model),
            clamp_iterations: 0,
            last_eval: None,
        })
    }

    /// Runs `iterations` more steps against `model`.
    pub fn run(
        &mut self,
        model: &SystemModel,
        iterations: usize,
        reference: Option<&ThresholdVector>,
    ) -> Result<Vec<TraceRow>> {
        self.state.check_model(model)?;
        self.config.validate()?;
        // Cached J belongs to the previous model.
        self.last_eval = None;
        let sim = Simulator::new(model, self.config.sim_controls());
        let mut rows = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            rows.push(self.step(&sim, model, reference));
        }
        Ok(rows)
    }

    fn step(&mut self, sim: &Simulator<'_>, model: &SystemModel, reference: Option<&ThresholdVector>) -> TraceRow {
        let n = self.state.iteration + 1;
        let a_n = self.config.step_size(n);
        let r_n = self.config.penalty(n);
        let am = self.state.max_action;
        let limit = (self.state.queue_size + 1) as f64;

        let sample = gradient_with(
            sim,
            &self.state.theta_tilde,
            am,
            self.config.seed,
            n,
            self.config.common_random_numbers,
        );
        let mut grad = sample.gradient;

        // Penalty terms and multipliers use υ at the pre-update estimate.
        let theta = &self.state.theta_tilde;
        for h in 0..self.state.num_channel_states {
            for i in 0..am.saturating_sub(1) {
                let d = h * am + i;
                let upsilon = theta[d] - theta[d + 1];
                let l = h * (am - 1) + i;
                let mu = (self.state.lambda[l] + r_n * upsilon).max(0.0);
                grad[d] += mu;
                grad[d + 1] -= mu;
                self.state.lambda[l] = mu;
            }
        }

        let mut clamped = false;
        for (t, g) in self.state.theta_tilde.iter_mut().zip(&grad) {
            let next = *t - a_n * g;
            let bounded = next.clamp(0.0, limit);
            clamped |= bounded != next;
            *t = bounded;
        }
        self.clamp_iterations += usize::from(clamped);
        self.state.iteration = n;

        let estimate = self.state.estimate();
        let j_rounded = match &self.last_eval {
            Some((t, j)) if *t == estimate => *j,
            _ => {
                let policy = thresholds_to_policy(&estimate).expect("repaired estimate is feasible");
                let j = policy_objective(model, &policy);
                self.last_eval = Some((estimate, j));
                j
            }
        };
        TraceRow {
            n,
            a_n,
            r_n,
            j_rounded,
            normalized_error: reference.and_then(|r| self.state.normalized_error(r)),
            max_lambda: self.state.max_lambda(),
            clamp_flag: clamped,
        }
    }

    pub fn estimate(&self) -> ThresholdVector {
        self.state.estimate()
    }

    /// More than half of the iterations so far pushed the estimate outside
    /// the box.
    pub fn diverging(&self) -> bool {
        self.state.iteration > 0 && 2 * self.clamp_iterations > self.state.iteration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DspsaOutcome {
    pub thresholds: ThresholdVector,
    pub state: DspsaState,
    pub trace: Vec<TraceRow>,
    pub diverging: bool,
}

/// Runs `config.iterations` steps from `Θ̃ = 0`.
pub fn dspsa_run(
    model: &SystemModel,
    config: &DspsaConfig,
    reference: Option<&ThresholdVector>,
) -> Result<DspsaOutcome> {
    let mut driver = Dspsa::new(model, config.clone())?;
    let trace = driver.run(model, config.iterations, reference)?;
    Ok(DspsaOutcome {
        thresholds: driver.estimate(),
        diverging: driver.diverging(),
        state: driver.state,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_fsmc, ChannelParams, FsmcChannel};
    use crate::mdp::{make_poisson_arrivals, ArrivalDist, SystemConfig, Truncation};
    use crate::solvers::{evaluate_policy, value_iteration, DEFAULT_EPSILON};
    use crate::structure::{policy_to_thresholds, thresholds_to_policy_lenient};

    fn model(weight: f64, queue_size: usize, max_action: usize, k: usize, beta: f64) -> SystemModel {
        SystemModel::new(SystemConfig {
            queue_size,
            max_action,
            weight,
            ber_constraint: 1e-3,
            discount: beta,
            arrivals: make_poisson_arrivals(1.0, queue_size, Truncation::Renormalize).unwrap(),
            channel: build_fsmc(&ChannelParams {
                average_snr: 1.0,
                doppler_hz: 10.0,
                epoch_seconds: 1e-3,
                num_states: k,
            })
            .unwrap(),
            packet_bits: None,
        })
        .unwrap()
    }

    #[test]
    fn schedules() {
        let c = DspsaConfig::default();
        assert!((c.step_size(1) - 0.015 / 101f64.powf(0.602)).abs() < 1e-18);
        assert_eq!(c.penalty(1), 10.0);
        assert!(c.step_size(10) < c.step_size(9));
        assert!(c.penalty(10) > c.penalty(9));
        assert!(DspsaConfig { alpha1: 1.5, ..c.clone() }.validate().is_err());
        assert!(DspsaConfig { step_scale: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn zero_cost_model_gives_zero() {
        let channel = FsmcChannel::from_parts(vec![0.0], vec![vec![1.0]], vec![1.0]).unwrap();
        let m = SystemModel::new(SystemConfig {
            queue_size: 3,
            max_action: 2,
            weight: 5.0,
            ber_constraint: 1e-3,
            discount: 0.9,
            arrivals: ArrivalDist::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
            channel,
            packet_bits: None,
        })
        .unwrap();
        let never = ThresholdVector::filled(3, 1, 2, 4);
        // Queues never fill and nothing is sent.
        assert_eq!(simulate_j_hat(&m, &never, 1, SimControls::default()), 0.0);
        // Both perturbed points clamp to the never-transmit corner.
        let g = dspsa_gradient(&m, &[4.0, 4.0], 2, 9, 1, &DspsaConfig::default());
        assert!(g.gradient.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn myopic_simulation_is_exact() {
        let m = model(3.0, 6, 3, 3, 0.0);
        let t = ThresholdVector::new(6, vec![vec![1, 2, 5], vec![0, 2, 3], vec![0, 0, 7]]).unwrap();
        let p = thresholds_to_policy_lenient(&t);
        let want: f64 = (0..m.num_states())
            .map(|x| {
                let s = m.state(x);
                m.immediate_cost(s.b, s.h, p.get(s.b, s.h))
            })
            .sum();
        assert_eq!(simulate_j_hat(&m, &t, 3, SimControls::default()), want);
    }

    #[test]
    fn simulation_mean_matches_exact_value() {
        let m = model(10.0, 4, 2, 2, 0.8);
        let t = ThresholdVector::new(4, vec![vec![2, 4], vec![1, 3]]).unwrap();
        let exact = evaluate_policy(&m, &thresholds_to_policy(&t).unwrap()).total();
        let sim = Simulator::new(&m, SimControls::default());
        let draws: Vec<f64> = (0..2000).map(|s| sim.j_hat(&t, s)).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - exact).abs() < 2.0 * se + 1e-3, "mean {mean}, exact {exact}, se {se}");
    }

    #[test]
    fn linear_objective_gives_exact_slope() {
        for d in [1i8, -1] {
            let (g, _, _) = perturbation_gradient(&[4], &[d], |p, _| 2.5 * p[0] as f64 + 1.0);
            assert_eq!(g, vec![2.5]);
        }
    }

    #[test]
    fn enumeration_mean_matches_midpoint_gradient() {
        // Exact J on a dyadic grid so every sum below is exact.
        let m = model(4.0, 3, 2, 2, 0.9);
        let quantized = |point: &[usize]| {
            let t = ThresholdVector::from_flat(3, 2, 2, point.to_vec()).unwrap();
            let j = evaluate_policy(&m, &thresholds_to_policy_lenient(&t)).total();
            (j * 65536.0).round() / 65536.0
        };
        let base = [1usize, 2, 0, 2];
        let dim = base.len();
        let mut mean = vec![0.0; dim];
        for mask in 0u32..(1 << dim) {
            let delta: Vec<i8> = (0..dim).map(|d| if mask >> d & 1 == 1 { 1 } else { -1 }).collect();
            let (g, _, _) = perturbation_gradient(&base, &delta, |p, _| quantized(p));
            mean.iter_mut().zip(&g).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= f64::from(1u32 << dim));

        let half = f64::from(1u32 << (dim - 1));
        for d in 0..dim {
            let (mut with, mut without) = (0.0, 0.0);
            for mask in 0u32..(1 << dim) {
                let point: Vec<usize> = (0..dim).map(|e| base[e] + (mask >> e & 1) as usize).collect();
                if mask >> d & 1 == 1 {
                    with += quantized(&point);
                } else {
                    without += quantized(&point);
                }
            }
            assert_eq!(mean[d], with / half - without / half, "coordinate {d}");
        }
    }

    #[test]
    fn zero_iterations_returns_full_rate_policy() {
        let m = model(1.0, 5, 3, 2, 0.9);
        let out = dspsa_run(&m, &DspsaConfig { iterations: 0, ..DspsaConfig::default() }, None).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(thresholds_to_policy(&out.thresholds).unwrap(), crate::Policy::constant(6, 2, 3));
    }

    #[test]
    fn runs_are_reproducible_and_multipliers_nonnegative() {
        let m = model(20.0, 5, 3, 2, 0.9);
        let opt = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
        let reference = policy_to_thresholds(&opt.policy, 3).unwrap();
        let cfg = DspsaConfig {
            iterations: 200,
            seed: 42,
            ..DspsaConfig::default()
        };
        let a = dspsa_run(&m, &cfg, Some(&reference)).unwrap();
        let b = dspsa_run(&m, &cfg, Some(&reference)).unwrap();
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
        assert_eq!(a.state, b.state);
        assert!(a.state.lambda.iter().all(|&l| l >= 0.0));
        assert!(a.thresholds.is_feasible());
        assert!(a
            .state
            .theta_tilde
            .iter()
            .all(|&t| (0.0..=6.0).contains(&t)));
        let c = dspsa_run(&m, &DspsaConfig { seed: 43, ..cfg }, Some(&reference)).unwrap();
        assert_ne!(a.state.theta_tilde, c.state.theta_tilde);
    }

    #[test]
    fn finds_optimum_on_small_instance() {
        let m = model(100.0, 5, 2, 2, 0.95);
        let opt = value_iteration(&m, DEFAULT_EPSILON, None).unwrap();
        let best = evaluate_policy(&m, &opt.policy).total();
        let cfg = DspsaConfig {
            iterations: 1000,
            seed: 8,
            ..DspsaConfig::default()
        };
        let out = dspsa_run(&m, &cfg, None).unwrap();
        let found = evaluate_policy(&m, &thresholds_to_policy(&out.thresholds).unwrap()).total();
        assert!((found - best) / best < 0.01, "found {found}, optimum {best}");
        assert!(!out.diverging);
    }

    #[test]
    fn split_run_equals_single_run() {
        let m = model(20.0, 5, 3, 2, 0.9);
        let cfg = DspsaConfig {
            iterations: 60,
            seed: 5,
            ..DspsaConfig::default()
        };
        let whole = dspsa_run(&m, &cfg, None).unwrap();
        let mut driver = Dspsa::new(&m, cfg).unwrap();
        let mut trace = driver.run(&m, 25, None).unwrap();
        trace.extend(driver.run(&m, 35, None).unwrap());
        assert_eq!(trace, whole.trace);
        assert_eq!(driver.state, whole.state);
    }

    #[test]
    fn stream_seeds_differ() {
        let a = stream_seed(&[1, 2, 3]);
        assert_ne!(a, stream_seed(&[1, 3, 2]));
        assert_ne!(a, stream_seed(&[1, 2, 4]));
        assert_eq!(a, stream_seed(&[1, 2, 3]));
    }
}
