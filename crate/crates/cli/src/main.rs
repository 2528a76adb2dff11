use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use defragsim::config::ExperimentConfig;
use defragsim::controller::Algorithm;
use defragsim::experiment::{aggregate, experiment_specs, run_specs, sweep_specs, write_aggregate, RunOutput, SweepAxis};
use defragsim::solver::{brute_force_min_moves, solve, SolverInstance, SolverOptions};

#[derive(Parser)]
#[command(name = "defragsim", version, about = "GPU cluster defragmentation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, load, seed) combination of a config.
    Run {
        config: PathBuf,
        /// Comma-separated subset of algorithms.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<Algorithm>>,
        /// Number of seeds per load.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output directory (defaults to the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-run event log.
        #[arg(long)]
        event_log: bool,
    },
    /// Run a grid along one axis listed in the config.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Solve a JSON solver instance and compare with exhaustive search.
    Oracle { instance: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, defragsim::Error> {
    ExperimentConfig::load(path)
}

fn report(out: &Path, outputs: &[RunOutput]) -> anyhow::Result<()> {
    let rows = aggregate(outputs);
    write_aggregate(out, &rows)?;
    println!("{:<14} {:<18} {:>6} {:>6} {:>9} {:>9} {:>8}", "cell", "algorithm", "load", "jobs", "mean", "p99", "moves");
    for r in &rows {
        println!(
            "{:<14} {:<18} {:>6.2} {:>6} {:>9.4} {:>9.4} {:>8}",
            if r.cell.is_empty() { "-" } else { &r.cell },
            r.algorithm,
            r.load,
            r.jobs,
            r.mean_slowdown.unwrap_or(f64::NAN),
            r.p99_slowdown.unwrap_or(f64::NAN),
            r.total_moves
        );
    }
    let invariant_breaks: u64 = outputs
        .iter()
        .map(|o| o.result.stats.isolation_violations + o.result.stats.conservation_failures)
        .sum();
    if invariant_breaks > 0 {
        anyhow::bail!(defragsim::Error::Invariant(format!("{invariant_breaks} invariant checks failed")));
    }
    Ok(())
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run {
            config,
            algorithms,
            seeds,
            out,
            event_log,
        } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.clone());
            let specs = experiment_specs(&cfg, algorithms.as_deref(), seeds);
            eprintln!("running {} simulations into {}", specs.len(), out.display());
            let outputs = run_specs(&cfg, &specs, Some(&out), event_log)?;
            report(&out, &outputs)
        }
        Command::Sweep { config, axis, out } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.join(format!("sweep-{axis}")));
            let specs = sweep_specs(&cfg, axis)?;
            eprintln!("sweeping {axis}: {} simulations into {}", specs.len(), out.display());
            let outputs = run_specs(&cfg, &specs, Some(&out), false)?;
            report(&out, &outputs)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let n = experiment_specs(&cfg, None, None).len();
            println!("ok: {} algorithms, {} loads, {} runs", cfg.algorithms.len(), cfg.trace.loads.len(), n);
            Ok(())
        }
        Command::Oracle { instance } => {
            let text = std::fs::read_to_string(&instance).with_context(|| format!("reading {}", instance.display()))?;
            let inst = SolverInstance::from_json(&text)?;
            let plan = solve(&inst, &SolverOptions::default())?;
            let best = brute_force_min_moves(&inst)?;
            println!(
                "solver: {} moves ({} nodes, optimal={})  exhaustive: {} moves",
                plan.move_count, plan.stats.nodes_explored, plan.stats.optimal, best
            );
            if plan.move_count != best {
                anyhow::bail!(defragsim::Error::Invariant(format!(
                    "solver found {} moves, exhaustive minimum is {best}",
                    plan.move_count
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<defragsim::Error>().map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
