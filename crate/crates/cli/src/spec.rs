//! Experiment files: parsing, validation and model construction.

use std::fmt;

use qamsched_core::channel::db_to_linear;
use qamsched_core::dspsa::DspsaConfig;
use qamsched_core::mdp::make_poisson_arrivals;
use qamsched_core::solvers::DEFAULT_EPSILON;
use qamsched_core::{
    build_fsmc, Algorithm, ArrivalDist, ChannelParams, FsmcChannel, SystemConfig, SystemModel,
    Truncation,
};
use serde::{Deserialize, Serialize};

/// Spec error with the position of the offending key when known.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl SpecError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            line: None,
            column: None,
        }
    }

    fn at(mut self, pos: Option<(usize, usize)>) -> Self {
        if let Some((line, column)) = pos {
            self.line = Some(line);
            self.column = Some(column);
        }
        self
    }
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for SpecError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub channel: ChannelSpec,
    pub system: SystemSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub dspsa: DspsaSpec,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub average_snr_db: f64,
    pub doppler_hz: f64,
    pub epoch_seconds: f64,
    pub num_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub queue_size: usize,
    pub max_action: usize,
    pub weight: f64,
    pub ber_constraint: f64,
    pub discount: f64,
    pub arrivals: ArrivalSpec,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub packet_bits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalSpec {
    Poisson { rate: f64 },
    Explicit { pmf: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub algorithm: Algorithm,
    pub epsilon: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dp,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspsaSpec {
    #[serde(rename = "A")]
    pub step_scale: f64,
    #[serde(rename = "B")]
    pub step_offset: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(rename = "R")]
    pub penalty_scale: f64,
    pub iterations: usize,
    pub seed: u64,
    pub sim_tolerance: f64,
    pub sim_patience: usize,
    pub common_random_numbers: bool,
    /// Parameter changes applied after the given iteration.
    pub schedule: Vec<ScheduleChange>,
}

impl Default for DspsaSpec {
    fn default() -> Self {
        let c = DspsaConfig::default();
        Self {
            step_scale: c.step_scale,
            step_offset: c.step_offset,
            alpha1: c.alpha1,
            alpha2: c.alpha2,
            penalty_scale: c.penalty_scale,
            iterations: c.iterations,
            seed: c.seed,
            sim_tolerance: c.sim_tolerance,
            sim_patience: c.sim_patience,
            common_random_numbers: c.common_random_numbers,
            schedule: Vec::new(),
        }
    }
}

impl DspsaSpec {
    pub fn config(&self) -> DspsaConfig {
        DspsaConfig {
            step_scale: self.step_scale,
            step_offset: self.step_offset,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            penalty_scale: self.penalty_scale,
            iterations: self.iterations,
            seed: self.seed,
            sim_tolerance: self.sim_tolerance,
            sim_patience: self.sim_patience,
            common_random_numbers: self.common_random_numbers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleChange {
    /// Last iteration run under the previous parameters.
    pub after: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_constraint: Option<f64>,
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub step_scale: Option<f64>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub step_offset: Option<f64>,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub penalty_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSpec {
    pub num_states: Vec<usize>,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            num_states: (2..=10).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    /// Extra randomized instances checked for unit-step monotonicity in `b`.
    pub sweep_instances: usize,
    pub sweep_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    /// Full replacement for the channel transition matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Replacement rows, applied after `transition`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transition_rows: Vec<RowOverride>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.transition.is_none() && self.transition_rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowOverride {
    /// Channel state, counted from 1.
    pub state: usize,
    pub row: Vec<f64>,
}

/// Parameters that may change between DSPSA phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub weight: f64,
    pub discount: f64,
    pub ber_constraint: f64,
}

/// Marker key identifying a result document rather than a spec.
pub const VERSION_KEY: &str = "qamsched_version";
/// Prefix of the CSV comment line carrying the embedded spec.
pub const CSV_SPEC_PREFIX: &str = "# spec: ";

impl ExperimentSpec {
    /// Parses and validates a spec. Also accepts any output file written by
    /// this tool, in which case its embedded spec is used.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        if let Some(embedded) = text.lines().find_map(|l| l.strip_prefix(CSV_SPEC_PREFIX)) {
            return Self::parse(embedded);
        }
        let spec: ExperimentSpec = match serde_json::from_str::<serde_json::Value>(text) {
            Ok(serde_json::Value::Object(map)) if map.contains_key(VERSION_KEY) => {
                let inner = map
                    .get("spec")
                    .cloned()
                    .ok_or_else(|| SpecError::new("result document has no embedded spec"))?;
                serde_json::from_value(inner).map_err(|e| SpecError::new(e.to_string()))?
            }
            _ => serde_json::from_str(text).map_err(|e| SpecError {
                message: strip_position(&e.to_string()),
                line: Some(e.line()),
                column: Some(e.column()),
            })?,
        };
        spec.validate().map_err(|(key, msg)| SpecError::new(msg).at(locate_key(text, key)))?;
        Ok(spec)
    }

    /// Returns the offending key and a message.
    fn validate(&self) -> Result<(), (&'static str, String)> {
        let c = &self.channel;
        if !c.average_snr_db.is_finite() {
            return Err(("average_snr_db", "average_snr_db must be finite".into()));
        }
        self.channel_params()
            .validate()
            .map_err(|e| (core_field(&e).unwrap_or("channel"), e.to_string()))?;
        let s = &self.system;
        match &s.arrivals {
            ArrivalSpec::Poisson { rate } if !(*rate >= 0.0 && rate.is_finite()) => {
                return Err(("rate", format!("arrival rate must be non-negative, got {rate}")));
            }
            ArrivalSpec::Explicit { pmf } if pmf.len() > s.queue_size + 1 => {
                return Err((
                    "pmf",
                    format!("pmf has {} entries but support is 0..={}", pmf.len(), s.queue_size),
                ));
            }
            _ => {}
        }
        if !(self.solver.epsilon > 0.0 && self.solver.epsilon.is_finite()) {
            return Err(("epsilon", "epsilon must be positive".into()));
        }
        if self.compare.num_states.iter().any(|&k| k == 0) {
            return Err(("num_states", "compare.num_states entries must be at least 1".into()));
        }
        self.dspsa
            .config()
            .validate()
            .map_err(|e| (core_field(&e).unwrap_or("dspsa"), e.to_string()))?;
        let mut last = 0;
        for change in &self.dspsa.schedule {
            if change.after <= last {
                return Err(("after", "schedule entries need strictly increasing `after` > 0".into()));
            }
            last = change.after;
        }
        for r in &self.overrides.transition_rows {
            if r.state == 0 || r.state > c.num_states {
                return Err((
                    "state",
                    format!("override state {} outside 1..={}", r.state, c.num_states),
                ));
            }
        }
        // Builds every regime's model once to surface config errors here.
        for regime in self.regimes() {
            self.build_model_for(regime)
                .map_err(|e| (core_field(&e).unwrap_or("system"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            average_snr: db_to_linear(self.channel.average_snr_db),
            doppler_hz: self.channel.doppler_hz,
            epoch_seconds: self.channel.epoch_seconds,
            num_states: self.channel.num_states,
        }
    }

    pub fn build_channel(&self) -> qamsched_core::Result<FsmcChannel> {
        self.build_channel_with_states(self.channel.num_states)
    }

    fn build_channel_with_states(&self, num_states: usize) -> qamsched_core::Result<FsmcChannel> {
        let channel = build_fsmc(&ChannelParams {
            num_states,
            ..self.channel_params()
        })?;
        if self.overrides.is_empty() {
            return Ok(channel);
        }
        let mut matrix = self
            .overrides
            .transition
            .clone()
            .unwrap_or_else(|| channel.transition().to_vec());
        for r in &self.overrides.transition_rows {
            let slot = matrix.get_mut(r.state - 1).ok_or(qamsched_core::Error::StateOutOfRange {
                state: r.state - 1,
                num_states,
            })?;
            *slot = r.row.clone();
        }
        channel.with_transition(matrix)
    }

    pub fn arrivals(&self) -> qamsched_core::Result<ArrivalDist> {
        let s = &self.system;
        match &s.arrivals {
            ArrivalSpec::Poisson { rate } => make_poisson_arrivals(*rate, s.queue_size, s.truncation),
            ArrivalSpec::Explicit { pmf } => {
                let mut full = pmf.clone();
                full.resize(s.queue_size + 1, 0.0);
                ArrivalDist::new(full)
            }
        }
    }

    pub fn base_regime(&self) -> Regime {
        Regime {
            weight: self.system.weight,
            discount: self.system.discount,
            ber_constraint: self.system.ber_constraint,
        }
    }

    /// Regime in force before the first schedule entry, then after each one.
    pub fn regimes(&self) -> Vec<Regime> {
        let mut current = self.base_regime();
        let mut out = vec![current];
        for c in &self.dspsa.schedule {
            current.weight = c.weight.unwrap_or(current.weight);
            current.discount = c.discount.unwrap_or(current.discount);
            current.ber_constraint = c.ber_constraint.unwrap_or(current.ber_constraint);
            out.push(current);
        }
        out
    }

    pub fn system_config(&self, regime: Regime, channel: FsmcChannel) -> qamsched_core::Result<SystemConfig> {
        Ok(SystemConfig {
            queue_size: self.system.queue_size,
            max_action: self.system.max_action,
            weight: regime.weight,
            ber_constraint: regime.ber_constraint,
            discount: regime.discount,
            arrivals: self.arrivals()?,
            channel,
            packet_bits: self.system.packet_bits,
        })
    }

    pub fn build_model(&self) -> qamsched_core::Result<SystemModel> {
        self.build_model_for(self.base_regime())
    }

    pub fn build_model_for(&self, regime: Regime) -> qamsched_core::Result<SystemModel> {
        SystemModel::new(self.system_config(regime, self.build_channel()?)?)
    }

    /// Base model with `num_states` channel states. Overrides only apply
    /// when the size matches the spec's channel.
    pub fn build_model_with_states(&self, num_states: usize) -> qamsched_core::Result<SystemModel> {
        let channel = if num_states == self.channel.num_states {
            self.build_channel()?
        } else {
            build_fsmc(&ChannelParams {
                num_states,
                ..self.channel_params()
            })?
        };
        SystemModel::new(self.system_config(self.base_regime(), channel)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

fn core_field(e: &qamsched_core::Error) -> Option<&'static str> {
    match e {
        qamsched_core::Error::InvalidChannel { field, .. }
        | qamsched_core::Error::InvalidConfig { field, .. } => Some(match *field {
            "average_snr" => "average_snr_db",
            other => other,
        }),
        qamsched_core::Error::NotStochastic { .. } => Some("overrides"),
        _ => None,
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_owned(),
        None => msg.to_owned(),
    }
}

/// 1-based line and column of the first `"key"` in `text`.
fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    let offset = text.find(&needle)?;
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    Some((line, column))
}
