use std::path::PathBuf;
use std::process::ExitCode;

use cadp_bench::{recompute, run_suite, BenchError, Method, Scenario, SuiteOptions, SuiteReport};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cadp-bench", version, about = "Closed-loop robot benchmark for C-ADP and a filtered baseline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a scenario and write traces, metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only run this method.
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Worker threads (default: one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Seed for sampled start states.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute metrics.csv and summary.json from the traces in a result directory.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn report(r: &SuiteReport) {
    for (method, s) in &r.summary.methods {
        let timing = s
            .mean_solve_ms
            .map(|ms| format!(", mean update {ms:.2} ms"))
            .unwrap_or_default();
        println!(
            "{method}: reached {}/{} ({} aborted){timing}",
            s.reached, s.trials, s.aborted
        );
    }
    for t in &r.summary.trials {
        if let Some(f) = &t.failure {
            println!("trial {} aborted: {f}", t.id);
        }
        for v in &t.violations {
            println!("trial {} safety violation: {v}", t.id);
        }
    }
    println!("results in {}", r.out.display());
}

fn execute(cli: Cli) -> Result<SuiteReport, BenchError> {
    match cli.command {
        Command::Run {
            config,
            out,
            method,
            jobs,
            seed,
        } => {
            let scenario = Scenario::load(&config)?;
            let options = SuiteOptions {
                methods: method.map_or(Method::ALL.to_vec(), |m| vec![m]),
                jobs,
                seed,
            };
            run_suite(&scenario, &out, &options)
        }
        Command::Metrics { input } => recompute(&input),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CADP_LOG_LEVEL", "info")).init();
    match execute(Cli::parse()) {
        Ok(r) => {
            report(&r);
            if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
