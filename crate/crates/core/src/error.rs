use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid channel parameter `{field}`: {reason}")]
    InvalidChannel { field: &'static str, reason: String },

    #[error("invalid system configuration `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("channel state {state} out of range (K = {num_states})")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("row {row} is not a probability vector: {reason}")]
    NotStochastic { row: usize, reason: String },

    #[error("non-positive SNR {snr} used as transmission-cost denominator in channel state {state}")]
    NonPositiveSnr { state: usize, snr: f64 },

    #[error("value iteration did not converge after {iterations} iterations (last gap {last_gap:e})")]
    NotConverged { iterations: usize, last_gap: f64 },

    #[error("policy is not nondecreasing in queue state at (b = {b}, h = {h})")]
    NonMonotonePolicy { b: usize, h: usize },

    #[error("threshold row {h} is not sorted at action {i}")]
    InfeasibleThresholds { h: usize, i: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
