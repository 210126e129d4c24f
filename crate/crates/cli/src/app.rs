//! Command-line front end shared by the binary and the test harness.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::spec::SpecError;
use crate::{cmd_check, cmd_compare, cmd_dspsa, cmd_solve, load_spec, CliError, Format, Outcome, RunOptions};

#[derive(Parser)]
#[command(name = "qamsched", version, about = "Adaptive m-QAM scheduling: solve, compare, learn and check")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON), or any output file of a previous run.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the spec's random seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Format of tabular outputs.
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the MDP and export the policy, values and structure report.
    Solve(Common),
    /// Count Q evaluations of the three solvers over a range of channel sizes.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Channel sizes, e.g. `2-10` or `2,4,8`.
        #[arg(long)]
        states: Option<String>,
    },
    /// Learn threshold policies by simulation.
    Dspsa(Common),
    /// Run every structural check on the solved instance.
    Check {
        #[command(flatten)]
        common: Common,
        /// Also check this many random instances.
        #[arg(long)]
        sweep: Option<usize>,
    },
}

fn parse_states(text: &str) -> Result<Vec<usize>, String> {
    if let Some((lo, hi)) = text.split_once('-') {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad range `{text}`"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad range `{text}`"))?;
        if lo == 0 || hi < lo {
            return Err(format!("bad range `{text}`"));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(format!("bad channel size `{s}`")),
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let options = |c: &Common| RunOptions {
        out: c.out.clone(),
        seed: c.seed,
        format: c.format.parse::<Format>().expect("validated by clap"),
    };
    match cli.command {
        Command::Solve(c) => cmd_solve(load_spec(&c.spec)?, &options(&c)),
        Command::Compare { common, states } => {
            let mut spec = load_spec(&common.spec)?;
            if let Some(s) = states {
                spec.compare.num_states = parse_states(&s).map_err(|message| CliError::Spec {
                    path: "--states".into(),
                    message: SpecError::new(message),
                })?;
            }
            cmd_compare(spec, &options(&common))
        }
        Command::Dspsa(c) => cmd_dspsa(load_spec(&c.spec)?, &options(&c)),
        Command::Check { common, sweep } => cmd_check(load_spec(&common.spec)?, &options(&common), sweep),
    }
}

/// Parses `args` (including the program name) without exiting on error.
pub fn parse_args<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args)
}

#[cfg(test)]
mod tests {
    use super::parse_states;

    #[test]
    fn states_argument() {
        assert_eq!(parse_states("2-4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_states("2, 8").unwrap(), vec![2, 8]);
        assert!(parse_states("4-2").is_err());
        assert!(parse_states("0").is_err());
    }
}
