use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otafd::checks::{run_all, CheckOptions};
use otafd::config::{load_config, Overrides, ResolvedConfig};
use otafd::error::{Error, Result};
use otafd::experiment::{
    configure_threads, design_from_config, design_from_snapshot, horizon_report, log_grid, run_simulate,
    run_sweep_epsilon, write_sweep, ChannelSnapshot,
};
use otafd::output::write_json;
use serde::Serialize;

/// Differentially private over-the-air federated distillation.
#[derive(Parser)]
#[command(name = "otafd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the replication count of the config.
    #[arg(long)]
    replications: Option<u32>,
}

impl Common {
    fn load(&self) -> Result<ResolvedConfig> {
        let overrides = Overrides { seed: self.seed, replications: self.replications };
        match &self.config {
            Some(path) => load_config(path, overrides),
            None => otafd::config::resolve(otafd::config::parse_config("{}")?, overrides, PathBuf::new()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and log every replication of a config.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Continue from checkpoints left in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Transceiver design for one channel snapshot.
    Design {
        #[command(flatten)]
        common: Common,
        /// Snapshot JSON; without it round `--round` of the config is used.
        #[arg(long, conflicts_with = "config")]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        round: u64,
        /// Directory for `design.json`; stdout only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal training horizon, its continuous relaxation and the
    /// exhaustive-search oracle.
    Horizon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean Phi2, accuracy and uplink time over a grid of epsilon.
    SweepEpsilon {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly increasing epsilon values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Log-spaced points on [0.001, 0.1] when `--grid` is absent.
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, default_value_t = 1e-11)]
        delta: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the numerical self-checks.
    Validate {
        #[arg(long)]
        seed: Option<u64>,
        /// Scale lambda of noise-limited classes after the design (negative
        /// control; the DP equality check then fails).
        #[arg(long)]
        perturb_lambda: Option<f64>,
        /// Directory for `checks.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Prints a line; a closed pipe (`otafd ... | head`) is not an error.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> Result<()> {
    say(&serde_json::to_string_pretty(value)?);
    if let Some(dir) = out {
        write_json(&dir.join(name), value)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { common, out, resume } => {
            let cfg = common.load()?;
            let summaries = run_simulate(&cfg, &out, resume)?;
            for s in &summaries {
                let note = match &s.horizon {
                    Some(h) if h.clamped => format!(" (optimal {} clamped)", h.optimal_rounds),
                    _ => String::new(),
                };
                say(&format!(
                    "replication {:>3}: rounds {}{note}, final accuracy {:.4}, uplink {:.6e} s",
                    s.replication, s.rounds, s.final_accuracy, s.total_uplink_time_s
                ));
            }
            say(&format!("config digest {}; results in {}", cfg.digest(), out.display()));
        }
        Command::Design { common, snapshot, round, out } => {
            let report = match snapshot {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    let snap: ChannelSnapshot =
                        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("snapshot {e}")))?;
                    design_from_snapshot(&snap)?
                }
                None => design_from_config(&common.load()?, round)?,
            };
            print_json(&report, out.as_deref(), "design.json")?;
        }
        Command::Horizon { common, out } => {
            let report = horizon_report(&common.load()?)?;
            print_json(&report, out.as_deref(), "horizon.json")?;
        }
        Command::SweepEpsilon { common, grid, points, delta, out } => {
            let cfg = common.load()?;
            let grid = grid.unwrap_or_else(|| log_grid(0.001, 0.1, points));
            let result = run_sweep_epsilon(&cfg, &grid, delta)?;
            write_sweep(&cfg, &out, &result)?;
            for a in &result.aggregates {
                say(&format!(
                    "epsilon {:.4e}: mean Phi2 {:.6e} (sd {:.2e}), accuracy {:.4} (sd {:.4}), n={}",
                    a.epsilon, a.mean_phi2_mean, a.mean_phi2_std, a.final_accuracy_mean, a.final_accuracy_std, a.count
                ));
            }
        }
        Command::Validate { seed, perturb_lambda, out } => {
            let opts = CheckOptions { seed: seed.unwrap_or(CheckOptions::default().seed), perturb_lambda };
            let results = run_all(opts);
            for r in &results {
                say(&r.to_string());
            }
            if let Some(dir) = out {
                write_json(&dir.join("checks.json"), &results)?;
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Error::ChecksFailed { failed, total: results.len() });
            }
            say(&format!("all {} checks passed", results.len()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
