//! `qinit` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qinit::harness::{
    cmd_discriminate, cmd_eval, cmd_latency, cmd_simulate_traces, cmd_sweep_lambda, cmd_train, ExperimentSpec,
    RunOptions, Scenario,
};
use qinit::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "qinit", version, about = "Simulated RL feedback for qubit initialization")]
struct Cli {
    /// TOML overrides applied on top of the scenario preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scenario preset when no config file names one.
    #[arg(long, global = true, value_enum)]
    scenario: Option<Scenario>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory; nothing is written when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Validate and print the resolved config, then exit.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent and validate it.
    Train {
        /// Penalty λ; defaults to the first configured value.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Validate a saved policy checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train per λ and emit the agent and threshold frontiers.
    SweepLambda,
    /// Latency ledger of the configured network.
    Latency,
    /// Neural-network versus matched-filter discrimination curve.
    Discriminate {
        /// Labelled trace CSV; simulated when omitted.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Write a labelled trace set.
    SimulateTraces {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        /// Trace length in samples.
        #[arg(long, default_value_t = 2048)]
        len: usize,
    },
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let base = match &cli.config {
        Some(p) => ExperimentSpec::from_toml_file(p)?,
        None => ExperimentSpec::for_scenario(cli.scenario.unwrap_or(Scenario::StrongQubit)),
    };
    let spec = match (cli.scenario, &cli.config) {
        (Some(s), Some(p)) if s != base.experiment.scenario => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::parse(p, e))?;
            let exp = table.entry("experiment").or_insert_with(|| toml::Value::Table(Default::default()));
            if let toml::Value::Table(t) = exp {
                t.insert("scenario".into(), toml::Value::String(s.name().into()));
            }
            ExperimentSpec::from_toml_str(&toml::to_string(&table).map_err(|e| Error::parse(p, e))?, p)?
        }
        _ => base,
    };
    spec.validate()?;
    Ok(spec)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::parse("<stdout>", e))?;
    println!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let spec = load_spec(cli)?;
    if cli.dry_run {
        print!("{}", spec.to_toml()?);
        return Ok(());
    }
    let opts = RunOptions { out: cli.out.clone(), threads: cli.threads.max(1) };
    match &cli.command {
        Command::Train { lambda } => {
            let lambda = lambda.unwrap_or(spec.experiment.lambdas[0]);
            let run = cmd_train(&spec, cli.seed, lambda, &opts)?;
            print_json(&run.record)
        }
        Command::Eval { checkpoint, episodes } => {
            let n = episodes.unwrap_or(spec.experiment.validation_episodes);
            print_json(&cmd_eval(&spec, checkpoint, n, cli.seed, &opts)?)
        }
        Command::SweepLambda => {
            let sweep = cmd_sweep_lambda(&spec, cli.seed, &opts)?;
            println!("lambda,mean_cycles,infidelity,ci_lo,ci_hi");
            for r in &sweep.agents {
                println!("{},{:.4},{:.5},{:.5},{:.5}", r.lambda, r.mean_cycles, r.infidelity, r.ci_lo, r.ci_hi);
            }
            println!("fraction,mean_cycles,infidelity");
            for t in &sweep.thresholds {
                println!("{:.2},{:.4},{:.5}", t.fraction, t.mean_cycles, t.infidelity);
            }
            Ok(())
        }
        Command::Latency => print_json(&cmd_latency(&spec, &opts)?),
        Command::Discriminate { traces } => {
            let curve = cmd_discriminate(&spec, traces.as_deref(), cli.seed, &opts)?;
            println!("tau_ns,nn,matched_filter");
            for k in 0..curve.tau_ns.len() {
                println!("{},{:.5},{:.5}", curve.tau_ns[k], curve.nn[k], curve.matched_filter[k]);
            }
            Ok(())
        }
        Command::SimulateTraces { n, len } => {
            let set = cmd_simulate_traces(&spec, *n, *len, cli.seed, &opts)?;
            eprintln!("simulated {} traces of {} samples", set.traces.len(), set.trace_len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
