//! Command-line front end: validate scenario files, run them, or run the
//! built-in experiments, exporting deterministic CSV metrics.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use resfab::scenario::{
    builtin_scenario_text, parse_scenario, run_experiment, Builtin, RunError, Scenario,
};
use resfab::units::ns_to_secs;

#[derive(Parser)]
#[command(name = "resfab", version, about = "Residue-routed fabric simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and export CSV metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's duration, in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Check a scenario file and report every problem found.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a built-in experiment (fig_b_migration or fig_cd_isolation).
    Builtin {
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Offered rate for the fig_b_migration data flow.
        #[arg(long = "rate-mbps")]
        rate_mbps: Option<f64>,
        /// Install-gap blackhole width in milliseconds (default atomic).
        #[arg(long = "blackhole-ms")]
        blackhole_ms: Option<f64>,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, out, seed, duration } => {
            let text = match fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", scenario.display());
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            let mut parsed = match parse(&text) {
                Ok(s) => s,
                Err(code) => return code,
            };
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            if let Some(duration) = duration {
                if duration <= 0.0 {
                    eprintln!("error: duration must be positive");
                    return ExitCode::from(EXIT_VALIDATION);
                }
                parsed.duration_s = duration;
            }
            run(&parsed, &out)
        }
        Command::Validate { scenario } => {
            let text = match fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", scenario.display());
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            match parse(&text) {
                Ok(_) => {
                    println!("ok");
                    ExitCode::SUCCESS
                }
                Err(code) => code,
            }
        }
        Command::Builtin { name, out, rate_mbps, blackhole_ms } => {
            let Some(builtin) = Builtin::from_name(&name) else {
                eprintln!("error: unknown builtin `{name}` (expected fig_b_migration or fig_cd_isolation)");
                return ExitCode::from(EXIT_VALIDATION);
            };
            let text = builtin_scenario_text(builtin, rate_mbps, blackhole_ms);
            match parse(&text) {
                Ok(s) => run(&s, &out),
                Err(code) => code,
            }
        }
    }
}

fn parse(text: &str) -> Result<Scenario, ExitCode> {
    parse_scenario(text).map_err(|errors| {
        for e in &errors {
            eprintln!("error: {e}");
        }
        ExitCode::from(EXIT_VALIDATION)
    })
}

fn run(scenario: &Scenario, out: &std::path::Path) -> ExitCode {
    match run_experiment(scenario, out) {
        Ok(output) => {
            let totals = output.sim.totals();
            let c = output.sim.conservation();
            println!(
                "simulated {:.3}s: generated={} delivered={} droptail={} unmatched={} misroute={} in_flight={}",
                ns_to_secs(output.sim.duration_ns()),
                totals.generated,
                totals.delivered,
                totals.droptail,
                totals.unmatched,
                totals.misroute,
                c.in_flight,
            );
            for m in &output.sim.controller().migrations {
                println!(
                    "migration at {:.3}s: {} {} -> {} (dropped {})",
                    ns_to_secs(m.decided_at),
                    output.sim.flows()[m.flow].spec.name,
                    m.old_path,
                    m.new_path,
                    m.dropped_during_window,
                );
            }
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(RunError::Invalid(errors)) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
