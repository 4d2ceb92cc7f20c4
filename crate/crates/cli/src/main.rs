//! `scatterlab`: runs scattering-chain, diffusion and verification experiments
//! from a configuration file and writes CSV data with JSON metadata.

mod config;
mod experiments;
mod output;
mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{apply_override, from_value, load_value, parse_value, ConfigError, Experiment, RunConfig};
use experiments::{Outcome, RunError};
use output::write_json;

#[derive(Parser)]
#[command(name = "scatterlab", version, about = "Random billiard scattering and diffusion-limit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the velocity chain of a floor and write its path.
    SimulateChain(RunArgs),
    /// Run the Euler scheme for a velocity diffusion.
    SimulateSde(RunArgs),
    /// Compute the scattering matrices of a floor or a family of floors.
    ComputeMatrices(RunArgs),
    /// Tabulate the rescaled one-step generator against its limit.
    VerifyGenerator(RunArgs),
    /// Test chain marginals against the stationary law.
    StationaryTest(RunArgs),
    /// Compare chain marginals with the diffusion at a fixed time.
    ChainVsSde(RunArgs),
    /// List the built-in configurations, or print one.
    Presets {
        /// Print the configuration of this preset.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML, or JSON with a .json extension).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration to start from.
    #[arg(long)]
    preset: Option<String>,
    /// Override a configuration value, e.g. `--set chain.steps=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn error_exit(kind: &str, field: Option<&str>, message: &str, code: u8) -> ExitCode {
    let body = json!({ "error": { "kind": kind, "field": field, "message": message } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn config_error(e: &ConfigError) -> ExitCode {
    error_exit("config", e.field.as_deref(), &e.message, 2)
}

fn load_config(experiment: Experiment, args: &RunArgs) -> Result<RunConfig, ConfigError> {
    let mut value = match (&args.config, &args.preset) {
        (Some(path), _) => load_value(path)?,
        (None, Some(name)) => {
            let preset = presets::find(name).ok_or_else(|| ConfigError::new("preset", format!("unknown preset `{name}`")))?;
            parse_value(preset.config, false)?
        }
        (None, None) => toml::Value::Table(toml::Table::new()),
    };
    let table = value
        .as_table_mut()
        .ok_or_else(|| ConfigError::general("configuration must be a table"))?;
    match table.get("experiment").and_then(|v| v.as_str()) {
        Some(name) if name != experiment.name() => {
            return Err(ConfigError::new(
                "experiment",
                format!("config is for `{name}` but the subcommand is `{}`", experiment.name()),
            ))
        }
        _ => {
            table.insert("experiment".into(), toml::Value::String(experiment.name().into()));
        }
    }
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg = from_value(value)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.experiment != experiment {
        return Err(ConfigError::new("experiment", "cannot be changed by an override"));
    }
    Ok(cfg)
}

fn write_outputs(dir: &Path, outcome: &Outcome, meta: &serde_json::Value) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, table) in outcome.tables.iter().enumerate() {
        let name = if i == 0 { "data.csv".to_string() } else { format!("data_{}.csv", table.name) };
        table.write(&dir.join(&name))?;
        files.push(name);
    }
    if let Some(report) = &outcome.report {
        write_json(&dir.join("report.json"), report)?;
        files.push("report.json".into());
    }
    let mut meta = meta.clone();
    files.push("meta.json".into());
    meta["outputs"] = json!(files);
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(files)
}

fn run(experiment: Experiment, args: RunArgs) -> ExitCode {
    let cfg = match load_config(experiment, &args) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return config_error(&ConfigError::new("threads", "must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return error_exit("runtime", Some("threads"), &e.to_string(), 1);
        }
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let start = Instant::now();
    let outcome = match experiments::run(&cfg) {
        Ok(o) => o,
        Err(RunError::Config(e)) => return config_error(&e),
        Err(RunError::Runtime(e)) => return error_exit("runtime", None, &e.to_string(), 1),
    };
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": experiment.name(),
        "preset": args.preset,
        "config": cfg,
        "seed": cfg.seed,
        "threads": rayon::current_num_threads(),
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
        "counters": outcome.counters,
        "rng": scatterlab::rng::RNG_NAME,
    });
    match write_outputs(&out, &outcome, &meta) {
        Ok(files) => {
            println!("{}", json!({ "status": "ok", "out": out, "files": files }));
            ExitCode::SUCCESS
        }
        Err(e) => error_exit("io", None, &format!("writing to {}: {e}", out.display()), 1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::SimulateChain(a) => run(Experiment::SimulateChain, a),
        Command::SimulateSde(a) => run(Experiment::SimulateSde, a),
        Command::ComputeMatrices(a) => run(Experiment::ComputeMatrices, a),
        Command::VerifyGenerator(a) => run(Experiment::VerifyGenerator, a),
        Command::StationaryTest(a) => run(Experiment::StationaryTest, a),
        Command::ChainVsSde(a) => run(Experiment::ChainVsSde, a),
        Command::Presets { show: Some(name) } => match presets::find(&name) {
            Some(p) => {
                print!("{}", p.config);
                ExitCode::SUCCESS
            }
            None => error_exit("config", Some("preset"), &format!("unknown preset `{name}`"), 2),
        },
        Command::Presets { show: None } => {
            for p in presets::PRESETS {
                println!("{:<22} {}", p.name, p.description);
            }
            ExitCode::SUCCESS
        }
    }
}
