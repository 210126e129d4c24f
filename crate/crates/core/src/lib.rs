//! Cross-layer adaptive m-QAM transmission scheduling as a discounted MDP.
//!
//! The crate builds a finite-state Markov channel and a finite buffer into a
//! [`mdp::SystemModel`], solves it exactly ([`solvers`]), checks the
//! structure of the optimal policy ([`structure`]), and searches threshold
//! policies by simulation ([`dspsa`]).

pub mod channel;
pub mod dspsa;
pub mod error;
pub mod mdp;
pub mod solvers;
pub mod structure;

pub use channel::{build_fsmc, ChannelParams, FsmcChannel};
pub use error::{Error, Result};
pub use mdp::{ArrivalDist, SystemConfig, SystemModel, Truncation};
pub use solvers::{Algorithm, Policy, SolveReport, Solution, ValueFunction};
pub use structure::{StructureReport, ThresholdVector};
