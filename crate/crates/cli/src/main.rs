use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vidkern_core::harness::{self, synth, ExperimentConfig, Task};
use vidkern_core::Error;

/// Video understanding kernels: recognition, dense captioning and
/// spatio-temporal localization on synthetic data.
#[derive(Parser)]
#[command(name = "vidkern", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write `<out>/report.json`.
    Run {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output` or `vidkern-out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic dataset of a config under `<out>/data`.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_NUMERIC: u8 = 4;

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("VIDKERN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("VIDKERN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool, Error> {
    init_threads()?;
    let (cfg, out) = match cli.command {
        Command::Run { task, config, seed, out } => {
            let mut cfg = load(&config, seed)?;
            cfg.task = task;
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.output_dir());
            (cfg, out)
        }
        Command::Gen { config, out } => {
            let cfg = load(&config, None)?;
            cfg.validate()?;
            let out = out.unwrap_or_else(|| cfg.output_dir());
            let data = harness::run::data_dir(&out);
            synth::generate(&cfg, &data)?;
            println!("dataset written to {}", data.display());
            return Ok(true);
        }
        Command::Gradcheck { out } => {
            let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({"task": "gradcheck", "seed": 0}))
                .expect("literal config");
            let out = out.unwrap_or_else(|| cfg.output_dir());
            (cfg, out)
        }
    };
    let outcome = harness::run(&cfg, &out)?;
    if cfg.task == Task::Gradcheck {
        if let Some(checks) = outcome.report["metrics"]["checks"].as_array() {
            for c in checks {
                println!(
                    "{:<26} checked {:>2}  max rel err {:.3e}",
                    c["name"].as_str().unwrap_or("?"),
                    c["checked"],
                    c["max_rel_err"].as_f64().unwrap_or(f64::NAN)
                );
            }
        }
    }
    println!(
        "{} finished in {:.2}s, report at {}",
        cfg.task.name(),
        outcome.report["wall_time_secs"].as_f64().unwrap_or(0.0),
        out.join("report.json").display()
    );
    Ok(outcome.checks_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: numeric check failed");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
