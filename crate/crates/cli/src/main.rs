use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecoscen::backbone::Method;
use ecoscen::synth::SynthConfig;

mod commands;
mod config;
mod error;
mod output;

use config::{LlmMode, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "ecoscen",
    version,
    about = "Scenario generation for service ecosystems"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    llm_mode: Option<LlmMode>,
    /// Output root (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with knowledge, prompts and constraints.
    Synth {
        #[arg(long, default_value_t = 200)]
        apis: usize,
        #[arg(long, default_value_t = 500)]
        mashups: usize,
        #[arg(long, default_value_t = 5)]
        years: usize,
    },
    /// Categories and demand series.
    Ingest,
    /// Per-year co-occurrence networks.
    Network,
    /// Baseline backbones.
    Backbone {
        /// gt, hss, pla or cluster; repeatable. Defaults to all four.
        #[arg(long = "method")]
        methods: Vec<Method>,
    },
    /// Agent-coordinated scenario generation.
    Generate,
    /// Scenario vectors and deviation for all six methods.
    Evaluate,
    /// Timing runs for all six methods.
    Bench {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Metric and efficiency tables.
    Report,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(m) = cli.llm_mode {
        cfg.llm_mode = m;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.data_dir.is_some() {
        cfg.data_dir = cli.data_dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth {
        apis,
        mashups,
        years,
    } = cli.command
    {
        let mut sc = SynthConfig {
            n_apis: apis,
            n_mashups: mashups,
            n_years: years,
            ..Default::default()
        };
        if let Some(s) = cli.seed {
            sc.seed = s;
        }
        let out = cli.out.unwrap_or_else(|| PathBuf::from("data"));
        return commands::cmd_synth(&out, &sc);
    }
    let mut cfg = resolve(&cli)?;
    let needs_agents = matches!(
        cli.command,
        Command::Generate | Command::Evaluate | Command::Bench { .. } | Command::Report
    );
    cfg.validate(needs_agents)?;
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Ingest => commands::cmd_ingest(&cfg),
        Command::Network => commands::cmd_network(&cfg),
        Command::Backbone { methods } => {
            let methods = if methods.is_empty() {
                vec![Method::Cluster, Method::Gt, Method::Hss, Method::Pla]
            } else {
                methods
            };
            commands::cmd_backbone(&cfg, &methods)
        }
        Command::Generate => commands::cmd_generate(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg),
        Command::Bench { runs } => {
            if let Some(r) = runs {
                cfg.bench_runs = r;
                cfg.validate(true)?;
            }
            commands::cmd_bench(&cfg)
        }
        Command::Report => commands::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
