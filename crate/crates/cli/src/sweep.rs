//! Seeded random model instances for property sweeps.

use std::ops::RangeInclusive;

use qamsched_core::mdp::make_poisson_arrivals;
use qamsched_core::{build_fsmc, ArrivalDist, ChannelParams, SystemConfig, SystemModel, Truncation};
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRanges {
    pub queue_size: RangeInclusive<usize>,
    /// Upper bound on `A_m`, further capped by `L_B`.
    pub max_action: usize,
    pub num_states: RangeInclusive<usize>,
    /// Sampled log-uniformly.
    pub weight: (f64, f64),
    pub discount: (f64, f64),
    pub average_snr_db: (f64, f64),
    pub doppler_hz: (f64, f64),
}

impl SweepRanges {
    /// `L_B` in 4..=20, `A_m` up to `L_B`, `K` in 1..=10, `w` in
    /// [0.01, 1000], `β` in [0, 0.99].
    pub fn wide() -> Self {
        Self {
            queue_size: 4..=20,
            max_action: usize::MAX,
            num_states: 1..=10,
            weight: (0.01, 1000.0),
            discount: (0.0, 0.99),
            average_snr_db: (-5.0, 20.0),
            doppler_hz: (0.0, 30.0),
        }
    }

    /// `L_B <= 3`, `A_m <= 2`, `K <= 2`.
    pub fn small() -> Self {
        Self {
            queue_size: 1..=3,
            max_action: 2,
            num_states: 1..=2,
            ..Self::wide()
        }
    }
}

/// Parameters of one sampled instance, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub queue_size: usize,
    pub max_action: usize,
    pub num_states: usize,
    pub weight: f64,
    pub discount: f64,
    pub average_snr_db: f64,
    pub doppler_hz: f64,
}

fn random_pmf<R: Rng + ?Sized>(queue_size: usize, rng: &mut R) -> ArrivalDist {
    if rng.random_bool(0.5) {
        let rate = rng.random_range(0.0..queue_size as f64);
        return make_poisson_arrivals(rate, queue_size, Truncation::Renormalize)
            .expect("rate is non-negative");
    }
    let support = rng.random_range(1..=queue_size + 1);
    let mut w: Vec<f64> = (0..support)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[support - 1] = 1.0;
    }
    let total: f64 = w.iter().sum();
    let mut pmf: Vec<f64> = w.iter().map(|x| x / total).collect();
    pmf.resize(queue_size + 1, 0.0);
    // Push any rounding residue onto the largest entry.
    let residue = 1.0 - pmf.iter().sum::<f64>();
    let i = (0..pmf.len())
        .max_by(|&a, &b| pmf[a].total_cmp(&pmf[b]))
        .unwrap_or(0);
    pmf[i] += residue;
    ArrivalDist::new(pmf).expect("normalized pmf")
}

pub fn random_config<R: Rng + ?Sized>(ranges: &SweepRanges, rng: &mut R) -> (SystemConfig, InstanceSummary) {
    let queue_size = rng.random_range(ranges.queue_size.clone());
    let max_action = rng.random_range(1..=queue_size.min(ranges.max_action));
    let num_states = rng.random_range(ranges.num_states.clone());
    let (wl, wh) = ranges.weight;
    let weight = (rng.random_range(wl.ln()..=wh.ln())).exp();
    let discount = rng.random_range(ranges.discount.0..=ranges.discount.1);
    let average_snr_db = rng.random_range(ranges.average_snr_db.0..=ranges.average_snr_db.1);
    let doppler_hz = rng.random_range(ranges.doppler_hz.0..=ranges.doppler_hz.1);
    let channel = build_fsmc(&ChannelParams {
        average_snr: 10f64.powf(average_snr_db / 10.0),
        doppler_hz,
        epoch_seconds: 1e-3,
        num_states,
    })
    .expect("sampled channel parameters are valid");
    let config = SystemConfig {
        queue_size,
        max_action,
        weight,
        ber_constraint: 1e-3,
        discount,
        arrivals: random_pmf(queue_size, rng),
        channel,
        packet_bits: None,
    };
    let summary = InstanceSummary {
        queue_size,
        max_action,
        num_states,
        weight,
        discount,
        average_snr_db,
        doppler_hz,
    };
    (config, summary)
}

pub fn random_model<R: Rng + ?Sized>(ranges: &SweepRanges, rng: &mut R) -> (SystemModel, InstanceSummary) {
    let (config, summary) = random_config(ranges, rng);
    (SystemModel::new(config).expect("sampled config is valid"), summary)
}
