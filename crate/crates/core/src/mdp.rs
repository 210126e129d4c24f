//! The controlled Markov chain: queue dynamics, arrivals and immediate costs.
//!
//! State `x = (b, h)` is flattened as `b * K + h`. Actions `a ∈ 0..=A_m`
//! are bits per symbol and equal the number of packets sent in the epoch.

use serde::{Deserialize, Serialize};

use crate::channel::FsmcChannel;
use crate::error::{Error, Result};

const PMF_TOLERANCE: f64 = 1e-12;

/// How Poisson mass beyond the buffer size is handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Rescale the pmf on `0..=L_B` to sum to one.
    #[default]
    Renormalize,
    /// Put the tail mass `P(f >= L_B)` on `L_B`.
    LumpTail,
}

/// Per-epoch packet arrival distribution on `0..=L_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalDist {
    pmf: Vec<f64>,
}

impl ArrivalDist {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidConfig {
                field: "arrivals",
                reason: "empty pmf".into(),
            });
        }
        if let Some(p) = pmf.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidConfig {
                field: "arrivals",
                reason: format!("negative or non-finite probability {p}"),
            });
        }
        let sum: f64 = pmf.iter().sum();
        if (sum - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidConfig {
                field: "arrivals",
                reason: format!("pmf sums to {sum}"),
            });
        }
        Ok(Self { pmf })
    }

    pub fn point_mass(f: usize, queue_size: usize) -> Result<Self> {
        if f > queue_size {
            return Err(Error::InvalidConfig {
                field: "arrivals",
                reason: format!("point mass at {f} exceeds queue size {queue_size}"),
            });
        }
        let mut pmf = vec![0.0; queue_size + 1];
        pmf[f] = 1.0;
        Ok(Self { pmf })
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn max_arrivals(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(f, p)| f as f64 * p).sum()
    }
}

/// Poisson arrivals with mean `rate`, restricted to `0..=queue_size`.
pub fn make_poisson_arrivals(
    rate: f64,
    queue_size: usize,
    truncation: Truncation,
) -> Result<ArrivalDist> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "arrivals.rate",
            reason: format!("must be nonnegative, got {rate}"),
        });
    }
    let mut pmf = Vec::with_capacity(queue_size + 1);
    let mut term = (-rate).exp();
    for f in 0..=queue_size {
        if f > 0 {
            term *= rate / f as f64;
        }
        pmf.push(term);
    }
    match truncation {
        Truncation::Renormalize => {
            let z: f64 = pmf.iter().sum();
            pmf.iter_mut().for_each(|p| *p /= z);
        }
        Truncation::LumpTail => {
            let head: f64 = pmf[..queue_size].iter().sum();
            pmf[queue_size] = (1.0 - head).max(0.0);
        }
    }
    ArrivalDist::new(pmf)
}

/// Lindley recursion: `min([b - a]^+ + f, L_B)`.
#[inline]
pub fn queue_next(b: usize, a: usize, f: usize, queue_size: usize) -> usize {
    (b.saturating_sub(a) + f).min(queue_size)
}

/// Distribution of the next queue occupancy given `(b, a)`.
pub fn queue_transition_row(
    b: usize,
    a: usize,
    arrivals: &ArrivalDist,
    queue_size: usize,
) -> Vec<f64> {
    let mut row = vec![0.0; queue_size + 1];
    for (f, &p) in arrivals.pmf().iter().enumerate() {
        row[queue_next(b, a, f, queue_size)] += p;
    }
    row
}

/// Expected number of packets dropped, `E_f[[[b - a]^+ + f - L_B]^+]`.
pub fn expected_overflow(b: usize, a: usize, arrivals: &ArrivalDist, queue_size: usize) -> f64 {
    let y = b.saturating_sub(a);
    arrivals
        .pmf()
        .iter()
        .enumerate()
        .map(|(f, &p)| p * (y + f).saturating_sub(queue_size) as f64)
        .sum()
}

/// Power needed to send `a` bits/symbol at SNR `snr` under BER constraint
/// `ber`.
pub fn transmission_cost(a: usize, snr: f64, ber: f64) -> f64 {
    -(5.0 * ber).ln() * ((a as f64).exp2() - 1.0) / (1.5 * snr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub b: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    /// `L_B`, buffer size in packets.
    pub queue_size: usize,
    /// `A_m`, largest number of bits per symbol.
    pub max_action: usize,
    /// Weight of the overflow cost.
    pub weight: f64,
    /// BER constraint `P̄_e`.
    pub ber_constraint: f64,
    pub discount: f64,
    pub arrivals: ArrivalDist,
    pub channel: FsmcChannel,
    /// Packet length in bits; informational only.
    pub packet_bits: Option<u32>,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_action > self.queue_size {
            return Err(Error::InvalidConfig {
                field: "max_action",
                reason: format!(
                    "A_m = {} exceeds queue size {}",
                    self.max_action, self.queue_size
                ),
            });
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "weight",
                reason: format!("must be positive, got {}", self.weight),
            });
        }
        if !(self.ber_constraint > 0.0 && self.ber_constraint <= 0.2) {
            return Err(Error::InvalidConfig {
                field: "ber_constraint",
                reason: format!("must lie in (0, 0.2], got {}", self.ber_constraint),
            });
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig {
                field: "discount",
                reason: format!("must lie in [0, 1), got {}", self.discount),
            });
        }
        if self.arrivals.max_arrivals() != self.queue_size {
            return Err(Error::InvalidConfig {
                field: "arrivals",
                reason: format!(
                    "pmf support is 0..={}, expected 0..={}",
                    self.arrivals.max_arrivals(),
                    self.queue_size
                ),
            });
        }
        Ok(())
    }
}

/// A validated system with all cost and transition tables precomputed.
#[derive(Debug, Clone)]
pub struct SystemModel {
    config: SystemConfig,
    num_b: usize,
    num_h: usize,
    num_a: usize,
    /// `[b][a]`
    overflow: Vec<f64>,
    /// `[h][a]`
    cost_tr: Vec<f64>,
    /// `[b][h][a]`
    cost: Vec<f64>,
    /// `[b][a][b']`
    queue_rows: Vec<f64>,
    /// `[b][a]` -> nonzero `(b', p)` entries of the queue row.
    queue_sparse: Vec<Vec<(usize, f64)>>,
}

impl SystemModel {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let num_b = config.queue_size + 1;
        let num_h = config.channel.num_states();
        let num_a = config.max_action + 1;

        for (h, &snr) in config.channel.cost_snr().iter().enumerate() {
            if !(snr > 0.0) {
                return Err(Error::NonPositiveSnr { state: h, snr });
            }
        }

        let mut overflow = Vec::with_capacity(num_b * num_a);
        let mut queue_rows = Vec::with_capacity(num_b * num_a * num_b);
        let mut queue_sparse = Vec::with_capacity(num_b * num_a);
        for b in 0..num_b {
            for a in 0..num_a {
                overflow.push(expected_overflow(b, a, &config.arrivals, config.queue_size));
                let row = queue_transition_row(b, a, &config.arrivals, config.queue_size);
                queue_sparse.push(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(j, &p)| (j, p))
                        .collect(),
                );
                queue_rows.extend(row);
            }
        }

        let mut cost_tr = Vec::with_capacity(num_h * num_a);
        for &snr in config.channel.cost_snr() {
            for a in 0..num_a {
                cost_tr.push(transmission_cost(a, snr, config.ber_constraint));
            }
        }

        let mut cost = Vec::with_capacity(num_b * num_h * num_a);
        for b in 0..num_b {
            for h in 0..num_h {
                for a in 0..num_a {
                    cost.push(config.weight * overflow[b * num_a + a] + cost_tr[h * num_a + a]);
                }
            }
        }

        Ok(Self {
            config,
            num_b,
            num_h,
            num_a,
            overflow,
            cost_tr,
            cost,
            queue_rows,
            queue_sparse,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn channel(&self) -> &FsmcChannel {
        &self.config.channel
    }

    pub fn discount(&self) -> f64 {
        self.config.discount
    }

    pub fn queue_size(&self) -> usize {
        self.config.queue_size
    }

    pub fn max_action(&self) -> usize {
        self.config.max_action
    }

    pub fn num_queue_states(&self) -> usize {
        self.num_b
    }

    pub fn num_channel_states(&self) -> usize {
        self.num_h
    }

    pub fn num_actions(&self) -> usize {
        self.num_a
    }

    pub fn num_states(&self) -> usize {
        self.num_b * self.num_h
    }

    #[inline]
    pub fn state_index(&self, b: usize, h: usize) -> usize {
        b * self.num_h + h
    }

    #[inline]
    pub fn state(&self, x: usize) -> SystemState {
        SystemState {
            b: x / self.num_h,
            h: x % self.num_h,
        }
    }

    /// `c(b, h, a) = c_q(b, a) + c_tr(h, a)`.
    #[inline]
    pub fn immediate_cost(&self, b: usize, h: usize, a: usize) -> f64 {
        self.cost[(b * self.num_h + h) * self.num_a + a]
    }

    /// Overflow component `w E[overflow]`.
    #[inline]
    pub fn queue_cost(&self, b: usize, a: usize) -> f64 {
        self.config.weight * self.overflow[b * self.num_a + a]
    }

    /// Transmission power component.
    #[inline]
    pub fn transmission_cost(&self, h: usize, a: usize) -> f64 {
        self.cost_tr[h * self.num_a + a]
    }

    pub fn expected_overflow(&self, b: usize, a: usize) -> f64 {
        self.overflow[b * self.num_a + a]
    }

    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// `P^a_{b b'}` as a dense row over `b'`.
    #[inline]
    pub fn queue_row(&self, b: usize, a: usize) -> &[f64] {
        let start = (b * self.num_a + a) * self.num_b;
        &self.queue_rows[start..start + self.num_b]
    }

    /// Nonzero entries of `P^a_{b b'}`.
    #[inline]
    pub fn queue_row_sparse(&self, b: usize, a: usize) -> &[(usize, f64)] {
        &self.queue_sparse[b * self.num_a + a]
    }

    /// Product kernel `P^a_{b b'} P_{h h'}` over flattened `x'`.
    pub fn full_transition(&self, x: SystemState, a: usize) -> Vec<f64> {
        let qrow = self.queue_row(x.b, a);
        let hrow = &self.channel().transition()[x.h];
        let mut out = vec![0.0; self.num_states()];
        for (b2, &pb) in qrow.iter().enumerate() {
            for (h2, &ph) in hrow.iter().enumerate() {
                out[b2 * self.num_h + h2] = pb * ph;
            }
        }
        out
    }

    /// A cheap fingerprint of the cost table (FNV-1a over the IEEE bits).
    pub fn cost_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for c in &self.cost {
            for byte in c.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            queue_size: self.config.queue_size,
            max_action: self.config.max_action,
            num_channel_states: self.num_h,
            weight: self.config.weight,
            ber_constraint: self.config.ber_constraint,
            discount: self.config.discount,
            mean_arrivals: self.config.arrivals.mean(),
            packet_bits: self.config.packet_bits,
            cost_snr: self.channel().cost_snr().to_vec(),
            lowest_state_cost_snr: "conditional median of the lowest region".into(),
            cost_checksum: format!("{:016x}", self.cost_checksum()),
            max_cost: self.max_cost(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub queue_size: usize,
    pub max_action: usize,
    pub num_channel_states: usize,
    pub weight: f64,
    pub ber_constraint: f64,
    pub discount: f64,
    pub mean_arrivals: f64,
    pub packet_bits: Option<u32>,
    pub cost_snr: Vec<f64>,
    pub lowest_state_cost_snr: String,
    pub cost_checksum: String,
    pub max_cost: f64,
}
