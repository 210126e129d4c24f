//! Finite-state Markov channel (FSMC) models of slow, flat Rayleigh fading.
//!
//! The SNR axis is split into `K` equiprobable regions of the exponential
//! (Rayleigh power) distribution. Transitions only happen between adjacent
//! regions and are driven by the level crossing rate at each boundary.
//!
//! Channel states are indexed `0..K` throughout the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest normalized Doppler shift `f_D * T_D` treated as slow fading.
pub const SLOW_FADING_LIMIT: f64 = 0.01;

/// Off-diagonal transition probabilities are capped at this value so every
/// diagonal entry stays nonnegative.
pub const MAX_NEIGHBOUR_PROBABILITY: f64 = 0.5;

const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Mean SNR on a linear scale.
    pub average_snr: f64,
    /// Maximum Doppler shift in Hz.
    pub doppler_hz: f64,
    /// Decision epoch duration in seconds.
    pub epoch_seconds: f64,
    pub num_states: usize,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.average_snr > 0.0 && self.average_snr.is_finite()) {
            return Err(Error::InvalidChannel {
                field: "average_snr",
                reason: format!("must be positive and finite, got {}", self.average_snr),
            });
        }
        if !(self.doppler_hz >= 0.0 && self.doppler_hz.is_finite()) {
            return Err(Error::InvalidChannel {
                field: "doppler_hz",
                reason: format!("must be nonnegative, got {}", self.doppler_hz),
            });
        }
        if !(self.epoch_seconds > 0.0 && self.epoch_seconds.is_finite()) {
            return Err(Error::InvalidChannel {
                field: "epoch_seconds",
                reason: format!("must be positive, got {}", self.epoch_seconds),
            });
        }
        if self.num_states < 1 {
            return Err(Error::InvalidChannel {
                field: "num_states",
                reason: "need at least one state".into(),
            });
        }
        Ok(())
    }

    pub fn normalized_doppler(&self) -> f64 {
        self.doppler_hz * self.epoch_seconds
    }
}

/// Converts an SNR in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Quantile of the exponential SNR distribution with mean `average_snr`.
pub fn rayleigh_snr_quantile(average_snr: f64, p: f64) -> f64 {
    -average_snr * (1.0 - p).ln()
}

/// Level crossing rate of a Rayleigh-faded SNR process at threshold `snr`.
pub fn level_crossing_rate(snr: f64, average_snr: f64, doppler_hz: f64) -> f64 {
    let rho = snr / average_snr;
    (2.0 * std::f64::consts::PI * rho).sqrt() * doppler_hz * (-rho).exp()
}

/// An off-diagonal transition probability that had to be capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub from: usize,
    pub to: usize,
    pub raw: f64,
    pub clamped: f64,
}

/// Diagnostics gathered while building a channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub normalized_doppler: f64,
    /// `f_D * T_D` exceeded [`SLOW_FADING_LIMIT`].
    pub slow_fading_violated: bool,
    /// Some off-diagonal probability exceeded 0.5 before clamping.
    pub neighbour_probability_exceeded: bool,
    pub clamp_events: Vec<ClampEvent>,
    /// The transition matrix was replaced after construction.
    pub transition_overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FsmcChannel {
    boundaries: Vec<f64>,
    stationary: Vec<f64>,
    transition: Vec<Vec<f64>>,
    /// SNR used by the transmission-power cost in each state.
    cost_snr: Vec<f64>,
    report: ChannelReport,
    #[serde(skip)]
    samplers: Vec<Vec<(usize, f64)>>,
}

/// Builds the equiprobable-partition Rayleigh FSMC with level-crossing-rate
/// transitions.
pub fn build_fsmc(params: &ChannelParams) -> Result<FsmcChannel> {
    params.validate()?;
    let k = params.num_states;
    let kf = k as f64;
    let avg = params.average_snr;

    let boundaries: Vec<f64> = (0..k)
        .map(|i| rayleigh_snr_quantile(avg, i as f64 / kf))
        .collect();
    let stationary = vec![1.0 / kf; k];

    let mut report = ChannelReport {
        normalized_doppler: params.normalized_doppler(),
        slow_fading_violated: params.normalized_doppler() > SLOW_FADING_LIMIT,
        ..Default::default()
    };

    // Crossing probability of the boundary between states i and i+1. With
    // equal state probabilities it is the same in both directions.
    let mut crossing = Vec::with_capacity(k.saturating_sub(1));
    for i in 0..k.saturating_sub(1) {
        let lcr = level_crossing_rate(boundaries[i + 1], avg, params.doppler_hz);
        let raw = lcr * params.epoch_seconds / stationary[i];
        let p = if raw > MAX_NEIGHBOUR_PROBABILITY {
            report.neighbour_probability_exceeded = true;
            for (from, to) in [(i, i + 1), (i + 1, i)] {
                report.clamp_events.push(ClampEvent {
                    from,
                    to,
                    raw,
                    clamped: MAX_NEIGHBOUR_PROBABILITY,
                });
            }
            MAX_NEIGHBOUR_PROBABILITY
        } else {
            raw
        };
        crossing.push(p);
    }

    let mut transition = vec![vec![0.0; k]; k];
    for i in 0..k {
        let up = if i + 1 < k { crossing[i] } else { 0.0 };
        let down = if i > 0 { crossing[i - 1] } else { 0.0 };
        if i + 1 < k {
            transition[i][i + 1] = up;
        }
        if i > 0 {
            transition[i][i - 1] = down;
        }
        transition[i][i] = 1.0 - up - down;
    }

    let cost_snr = (0..k)
        .map(|i| {
            if i == 0 {
                // Region [0, Γ_2) starts at zero SNR; use its conditional median.
                rayleigh_snr_quantile(avg, 1.0 / (2.0 * kf))
            } else {
                boundaries[i]
            }
        })
        .collect();

    let samplers = build_samplers(&transition);
    Ok(FsmcChannel {
        boundaries,
        stationary,
        transition,
        cost_snr,
        report,
        samplers,
    })
}

fn build_samplers(transition: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
    transition
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(j, &p)| {
                    acc += p;
                    (j, acc)
                })
                .collect()
        })
        .collect()
}

/// Checks that `matrix` is square with rows that are probability vectors.
pub fn validate_stochastic(matrix: &[Vec<f64>], tolerance: f64) -> Result<()> {
    let n = matrix.len();
    for (r, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotStochastic {
                row: r,
                reason: format!("expected {n} entries, found {}", row.len()),
            });
        }
        if let Some(p) = row.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
            return Err(Error::NotStochastic {
                row: r,
                reason: format!("entry {p} outside [0, 1]"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::NotStochastic {
                row: r,
                reason: format!("sums to {sum}"),
            });
        }
    }
    Ok(())
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Solves `π (P - I) = 0, Σ π = 1` directly; when that system is singular
/// (several closed classes) falls back to the Cesàro average of `π_0 P^n`
/// from the uniform start.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Vec<f64> {
    let n = transition.len();
    if n == 0 {
        return Vec::new();
    }
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    if let Some(pi) = a.lu().solve(&rhs) {
        if pi.iter().all(|p| p.is_finite() && *p > -1e-12) {
            let mut pi: Vec<f64> = pi.iter().map(|p| p.max(0.0)).collect();
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= s);
            return pi;
        }
    }

    let mut current = vec![1.0 / n as f64; n];
    let mut average = vec![0.0; n];
    let rounds = 20_000;
    for _ in 0..rounds {
        for (avg, p) in average.iter_mut().zip(&current) {
            *avg += p;
        }
        let mut next = vec![0.0; n];
        for (i, p) in current.iter().enumerate() {
            for (j, q) in transition[i].iter().enumerate() {
                next[j] += p * q;
            }
        }
        current = next;
    }
    average.iter_mut().for_each(|p| *p /= rounds as f64);
    average
}

impl FsmcChannel {
    /// Assembles a channel from explicit parts. `cost_snr` must be positive.
    pub fn from_parts(
        boundaries: Vec<f64>,
        transition: Vec<Vec<f64>>,
        cost_snr: Vec<f64>,
    ) -> Result<Self> {
        let k = boundaries.len();
        if k == 0 {
            return Err(Error::InvalidChannel {
                field: "boundaries",
                reason: "need at least one state".into(),
            });
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidChannel {
                field: "boundaries",
                reason: "must be strictly increasing".into(),
            });
        }
        if transition.len() != k || cost_snr.len() != k {
            return Err(Error::Dimension(format!(
                "{k} boundaries but {} transition rows and {} cost SNRs",
                transition.len(),
                cost_snr.len()
            )));
        }
        validate_stochastic(&transition, ROW_SUM_TOLERANCE)?;
        let stationary = stationary_distribution(&transition);
        let samplers = build_samplers(&transition);
        Ok(Self {
            boundaries,
            stationary,
            transition,
            cost_snr,
            report: ChannelReport::default(),
            samplers,
        })
    }

    /// Replaces the transition matrix, keeping the SNR partition.
    pub fn with_transition(mut self, transition: Vec<Vec<f64>>) -> Result<Self> {
        if transition.len() != self.num_states() {
            return Err(Error::Dimension(format!(
                "override has {} rows, channel has {} states",
                transition.len(),
                self.num_states()
            )));
        }
        validate_stochastic(&transition, ROW_SUM_TOLERANCE)?;
        self.stationary = stationary_distribution(&transition);
        self.samplers = build_samplers(&transition);
        self.transition = transition;
        self.report.transition_overridden = true;
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.boundaries.len()
    }

    /// Lower SNR boundary of each region, linear scale.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn transition_prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    /// SNR plugged into the transmission-power cost for each state: the lower
    /// boundary, except in the lowest region whose boundary is zero.
    pub fn cost_snr(&self) -> &[f64] {
        &self.cost_snr
    }

    pub fn report(&self) -> &ChannelReport {
        &self.report
    }

    /// Draws the next channel state from row `h` of the transition matrix.
    pub fn sample_next_state<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Result<usize> {
        if h >= self.num_states() {
            return Err(Error::StateOutOfRange {
                state: h,
                num_states: self.num_states(),
            });
        }
        Ok(self.sample_unchecked(h, rng))
    }

    #[inline]
    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> usize {
        let row = &self.samplers[h];
        if row.len() == 1 {
            return row[0].0;
        }
        let u: f64 = rng.random();
        for &(j, c) in row {
            if u < c {
                return j;
            }
        }
        row.last().map(|&(j, _)| j).unwrap_or(h)
    }
}
