//! The four subcommands. Each writes its files and returns a short summary.

use std::fmt::Write as _;
use std::path::PathBuf;

use qamsched_core::dspsa::{trace_csv, Dspsa, DspsaState, TraceRow};
use qamsched_core::solvers::{evaluate_policy, solve, SolveOptions};
use qamsched_core::structure::{
    check_bounded_marginal, check_monotone_b, check_q_lnatural, check_q_submodular, policy_to_thresholds,
    thresholds_to_policy, CdfCrossing, QViolation,
};
use qamsched_core::{Algorithm, Policy, Solution, StructureReport, SystemModel, ThresholdVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{Format, Writer};
use crate::spec::{ExperimentSpec, Regime};
use crate::sweep::{random_model, InstanceSummary, SweepRanges};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub format: Format,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    /// Set when a checked property failed; files are still written.
    pub property_failure: Option<String>,
}

fn solve_model(model: &SystemModel, algorithm: Algorithm, epsilon: f64) -> Result<Solution, CliError> {
    solve(model, algorithm, &SolveOptions::with_epsilon(epsilon)).map_err(CliError::from_solve)
}

fn apply_seed(spec: &mut ExperimentSpec, seed: Option<u64>) {
    if let Some(s) = seed {
        spec.dspsa.seed = s;
        spec.check.sweep_seed = s;
    }
}

#[derive(Serialize)]
struct SolveResult<'a> {
    report: &'a qamsched_core::SolveReport,
    model: qamsched_core::mdp::ModelSummary,
    channel: &'a qamsched_core::channel::ChannelReport,
    total_value: f64,
}

pub fn cmd_solve(mut spec: ExperimentSpec, opts: &RunOptions) -> Result<Outcome, CliError> {
    apply_seed(&mut spec, opts.seed);
    let model = spec.build_model()?;
    let sol = solve_model(&model, spec.solver.algorithm, spec.solver.epsilon)?;
    let structure = StructureReport::build(&model, &sol.policy, Some(&sol.values));

    let mut w = Writer::new(&opts.out, opts.format, "solve", &spec)?;
    w.table("policy", &sol.policy.to_csv(), &sol.policy)?;
    w.table("values", &sol.values.to_csv(), &sol.values)?;
    w.json(
        "solve_report",
        &SolveResult {
            report: &sol.report,
            model: model.summary(),
            channel: model.channel().report(),
            total_value: sol.values.total(),
        },
    )?;
    w.json("structure", &structure)?;

    let summary = format!(
        "{}: {} iterations, {} Q evaluations, monotone in b: {}, unit steps: {}, monotone in h: {}",
        spec.solver.algorithm,
        sol.report.iterations,
        sol.report.q_evals_total,
        structure.monotone_in_b,
        structure.bounded_marginal,
        structure.monotone_in_h
    );
    Ok(Outcome {
        files: w.finish(),
        summary,
        property_failure: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub num_states: usize,
    pub iterations: usize,
    pub dp: f64,
    pub mpi_sub: f64,
    pub mpi_lnat: f64,
    pub dp_per_state: f64,
    pub mpi_sub_per_state: f64,
    pub mpi_lnat_per_state: f64,
    pub max_value_gap: f64,
}

pub fn compare_rows(spec: &ExperimentSpec) -> Result<Vec<CompareRow>, CliError> {
    let mut rows = Vec::new();
    for &k in &spec.compare.num_states {
        let model = spec.build_model_with_states(k)?;
        let sols = Algorithm::ALL
            .iter()
            .map(|&a| solve_model(&model, a, spec.solver.epsilon))
            .collect::<Result<Vec<_>, _>>()?;
        for s in &sols[1..] {
            if s.policy != sols[0].policy {
                return Err(CliError::Property(format!(
                    "{} disagrees with dp at K = {k}",
                    s.report.algorithm
                )));
            }
        }
        let states = model.num_states() as f64;
        let mean = |i: usize| sols[i].report.mean_q_evals_per_iteration();
        rows.push(CompareRow {
            num_states: k,
            iterations: sols[0].report.iterations,
            dp: mean(0),
            mpi_sub: mean(1),
            mpi_lnat: mean(2),
            dp_per_state: mean(0) / states,
            mpi_sub_per_state: mean(1) / states,
            mpi_lnat_per_state: mean(2) / states,
            max_value_gap: sols[1..]
                .iter()
                .map(|s| s.values.sup_distance(&sols[0].values))
                .fold(0.0, f64::max),
        });
    }
    Ok(rows)
}

pub fn cmd_compare(mut spec: ExperimentSpec, opts: &RunOptions) -> Result<Outcome, CliError> {
    apply_seed(&mut spec, opts.seed);
    let rows = compare_rows(&spec)?;
    let mut csv = String::from(
        "num_states,iterations,dp,mpi_sub,mpi_lnat,dp_per_state,mpi_sub_per_state,mpi_lnat_per_state,max_value_gap\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.num_states,
            r.iterations,
            r.dp,
            r.mpi_sub,
            r.mpi_lnat,
            r.dp_per_state,
            r.mpi_sub_per_state,
            r.mpi_lnat_per_state,
            r.max_value_gap
        );
    }
    let mut w = Writer::new(&opts.out, opts.format, "compare", &spec)?;
    w.table("compare", &csv, &rows)?;
    let summary = rows
        .iter()
        .map(|r| format!("K={}: dp {:.1}, mpi_sub {:.1}, mpi_lnat {:.1}", r.num_states, r.dp, r.mpi_sub, r.mpi_lnat))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Outcome {
        files: w.finish(),
        summary,
        property_failure: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseResult {
    pub first_iteration: usize,
    pub last_iteration: usize,
    pub weight: f64,
    pub discount: f64,
    pub ber_constraint: f64,
    /// Exact `Σ_x V(x)` of the optimal policy.
    pub optimum: f64,
    pub reference: ThresholdVector,
    /// Exact objective of the estimate at the end of the phase.
    pub final_objective: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DspsaResult {
    pub phases: Vec<PhaseResult>,
    pub thresholds: ThresholdVector,
    pub state: DspsaState,
    pub diverging: bool,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

fn optimum(model: &SystemModel, epsilon: f64) -> Result<(ThresholdVector, f64), CliError> {
    let sol = solve_model(model, Algorithm::Dp, epsilon)?;
    let reference = policy_to_thresholds(&sol.policy, model.max_action())?;
    Ok((reference, evaluate_policy(model, &sol.policy).total()))
}

/// Runs the scheduled DSPSA experiment without writing files.
pub fn run_dspsa(spec: &ExperimentSpec) -> Result<DspsaResult, CliError> {
    let regimes = spec.regimes();
    let total = spec.dspsa.iterations;
    let mut bounds: Vec<usize> = spec.dspsa.schedule.iter().map(|c| c.after.min(total)).collect();
    bounds.push(total);

    let first = spec.build_model_for(regimes[0])?;
    let mut driver = Dspsa::new(&first, spec.dspsa.config())?;
    let mut phases = Vec::new();
    let mut trace = Vec::new();
    let mut start = 0;
    for (i, (&regime, &end)) in regimes.iter().zip(&bounds).enumerate() {
        if i > 0 {
            let c = &spec.dspsa.schedule[i - 1];
            let cfg = &mut driver.config;
            cfg.step_scale = c.step_scale.unwrap_or(cfg.step_scale);
            cfg.step_offset = c.step_offset.unwrap_or(cfg.step_offset);
            cfg.penalty_scale = c.penalty_scale.unwrap_or(cfg.penalty_scale);
        }
        let model = spec.build_model_for(regime)?;
        let (reference, opt) = optimum(&model, spec.solver.epsilon)?;
        let count = end.saturating_sub(start);
        trace.extend(driver.run(&model, count, Some(&reference))?);
        let estimate = driver.estimate();
        let final_objective = evaluate_policy(&model, &thresholds_to_policy(&estimate)?).total();
        phases.push(phase_result(start, end, regime, opt, reference, final_objective));
        start = end.max(start);
    }
    Ok(DspsaResult {
        phases,
        thresholds: driver.estimate(),
        diverging: driver.diverging(),
        state: driver.state.clone(),
        trace,
    })
}

fn phase_result(
    start: usize,
    end: usize,
    regime: Regime,
    optimum: f64,
    reference: ThresholdVector,
    final_objective: f64,
) -> PhaseResult {
    PhaseResult {
        first_iteration: start + 1,
        last_iteration: end,
        weight: regime.weight,
        discount: regime.discount,
        ber_constraint: regime.ber_constraint,
        optimum,
        reference,
        final_objective,
        relative_gap: (final_objective - optimum) / optimum,
    }
}

pub fn cmd_dspsa(mut spec: ExperimentSpec, opts: &RunOptions) -> Result<Outcome, CliError> {
    apply_seed(&mut spec, opts.seed);
    let result = run_dspsa(&spec)?;
    let mut w = Writer::new(&opts.out, opts.format, "dspsa", &spec)?;
    w.table("trace", &trace_csv(&result.trace), &result.trace)?;
    w.table("thresholds", &result.thresholds.to_csv(), &result.thresholds)?;
    w.json("dspsa", &result)?;
    let mut summary = String::new();
    for p in &result.phases {
        let _ = writeln!(
            summary,
            "iterations {}..={} (w = {}): J = {:.4}, optimum {:.4}, gap {:+.2}%",
            p.first_iteration,
            p.last_iteration,
            p.weight,
            p.final_objective,
            p.optimum,
            100.0 * p.relative_gap
        );
    }
    if result.diverging {
        summary.push_str("warning: estimate left the box in more than half of the iterations\n");
    }
    Ok(Outcome {
        files: w.finish(),
        summary: summary.trim_end().to_owned(),
        property_failure: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub index: usize,
    pub instance: InstanceSummary,
    pub monotone_in_b: bool,
    pub bounded_marginal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub structure: StructureReport,
    pub q_submodular_witnesses: Vec<QViolation>,
    pub q_lnatural_witnesses: Vec<QViolation>,
    pub dominance_witnesses: Vec<CdfCrossing>,
    pub sweep_instances: usize,
    pub sweep_failures: Vec<SweepFailure>,
}

/// Unit-step monotonicity in `b` over `count` random instances.
pub fn monotone_sweep(count: usize, seed: u64, epsilon: f64) -> Result<Vec<SweepFailure>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for index in 0..count {
        let (model, instance) = random_model(&SweepRanges::wide(), &mut rng);
        let sol = solve_model(&model, Algorithm::Dp, epsilon)?;
        let (mb, bm) = unit_step_flags(&sol.policy);
        if !(mb && bm) {
            failures.push(SweepFailure {
                index,
                instance,
                monotone_in_b: mb,
                bounded_marginal: bm,
            });
        }
    }
    Ok(failures)
}

fn unit_step_flags(policy: &Policy) -> (bool, bool) {
    (check_monotone_b(policy).ok, check_bounded_marginal(policy).ok)
}

pub fn cmd_check(mut spec: ExperimentSpec, opts: &RunOptions, sweep: Option<usize>) -> Result<Outcome, CliError> {
    apply_seed(&mut spec, opts.seed);
    if let Some(n) = sweep {
        spec.check.sweep_instances = n;
    }
    let model = spec.build_model()?;
    let sol = solve_model(&model, spec.solver.algorithm, spec.solver.epsilon)?;
    let structure = StructureReport::build(&model, &sol.policy, Some(&sol.values));
    let sweep_failures = monotone_sweep(spec.check.sweep_instances, spec.check.sweep_seed, spec.solver.epsilon)?;
    let result = CheckResult {
        q_submodular_witnesses: check_q_submodular(&model, &sol.values).witnesses,
        q_lnatural_witnesses: check_q_lnatural(&model, &sol.values).witnesses,
        dominance_witnesses: structure.dominance_witnesses.clone(),
        structure,
        sweep_instances: spec.check.sweep_instances,
        sweep_failures,
    };

    let mut w = Writer::new(&opts.out, opts.format, "check", &spec)?;
    w.json("check", &result)?;
    w.table("violations", &result.structure.violations_csv(), &result.structure.violations)?;

    let s = &result.structure;
    let c = &s.channel_conditions;
    let flag = |b: bool| if b { "pass" } else { "FAIL" };
    let mut summary = String::new();
    let _ = writeln!(summary, "monotone in b ............ {}", flag(s.monotone_in_b));
    let _ = writeln!(summary, "bounded marginal ......... {}", flag(s.bounded_marginal));
    let _ = writeln!(summary, "monotone in h ............ {}", flag(s.monotone_in_h));
    let _ = writeln!(summary, "weight bound (closed form) {}", flag(c.corollary1_ok));
    let _ = writeln!(summary, "weight bound (all actions) {}", flag(c.eq_ok));
    let _ = writeln!(summary, "channel dominance ........ {}", flag(s.dominance_ok));
    let _ = writeln!(summary, "Q submodular ............. {}", flag(result.q_submodular_witnesses.is_empty()));
    let _ = write!(summary, "Q L-natural in (b, a) .... {}", flag(result.q_lnatural_witnesses.is_empty()));
    if result.sweep_instances > 0 {
        let _ = write!(
            summary,
            "\nrandom sweep ............. {}/{} unit-step monotone",
            result.sweep_instances - result.sweep_failures.len(),
            result.sweep_instances
        );
    }
    let property_failure = if !s.unconditional_ok() {
        Some("optimal policy is not unit-step monotone in the queue state".to_owned())
    } else if !result.sweep_failures.is_empty() {
        Some(format!(
            "{} random instances are not unit-step monotone in the queue state",
            result.sweep_failures.len()
        ))
    } else {
        None
    };
    Ok(Outcome {
        files: w.finish(),
        summary,
        property_failure,
    })
}
