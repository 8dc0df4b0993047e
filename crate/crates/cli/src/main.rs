use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bbgky_cli::config::{parse_override, ConfigError, RunConfig};
use bbgky_cli::output::{read_checkpoint, state_report};
use bbgky_cli::{run, sweep};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bbgky", version, about = "Truncated BBGKY propagation of bosonic reduced density matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the truncated hierarchy.
    Run {
        config: PathBuf,
        /// Override a configuration key, e.g. `--set correction.mode=eom`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory; defaults to `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propagate the full N-particle wavefunction as a reference.
    Exact {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one configuration per value of a key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, num_args = 0..)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Report the representability of a checkpointed state as JSON.
    Check {
        state: PathBuf,
        #[arg(long, default_value_t = -1e-10, allow_hyphen_values = true)]
        epsilon: f64,
    },
    /// Run the numerical self-consistency suites.
    Selftest {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

const EXIT_CONFIG: u8 = 2;

enum Failure {
    Config(ConfigError),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn overrides(set: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    set.iter().map(|s| parse_override(s)).collect()
}

fn load(config: &Path, set: &[String]) -> Result<RunConfig, ConfigError> {
    RunConfig::load(config, &overrides(set)?)
}

fn report_run(r: &run::RunReport, dir: &std::path::Path) -> u8 {
    match &r.message {
        Some(m) => eprintln!("{:?} at t = {}: {m}", r.status, r.failure_time.unwrap_or(r.t_end)),
        None => eprintln!("completed t = {} in {:.2} s", r.t_end, r.wall_time_seconds),
    }
    eprintln!("outputs in {}", dir.display());
    r.exit_code as u8
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run { config, set, out } => {
            let cfg = load(&config, &set)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let r = run::run(&cfg, &dir)?;
            Ok(report_run(&r, &dir))
        }
        Command::Exact { config, set, out } => {
            let cfg = load(&config, &set)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let r = run::exact(&cfg, &dir)?;
            Ok(report_run(&r, &dir))
        }
        Command::Sweep { config, axis, values, set, out, jobs } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", config.display())))?;
            let ov = overrides(&set)?;
            // Validate the base document so that typos fail before any run starts.
            let base = RunConfig::from_toml(&text, &ov)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&base.output.dir));
            let points = sweep::sweep(&text, &ov, &axis, &values, &dir, jobs)?;
            for p in &points {
                eprintln!("{axis}={}: exit {}{}", p.value, p.exit_code, p.message.as_deref().map(|m| format!(" ({m})")).unwrap_or_default());
            }
            eprintln!("merged table in {}", dir.join(sweep::SWEEP_FILE).display());
            Ok(0)
        }
        Command::Check { state, epsilon } => {
            let (s, n) = read_checkpoint(&state)?;
            let r = state_report(&s, n, epsilon)?;
            println!("{}", serde_json::to_string_pretty(&r).context("serializing report")?);
            Ok(0)
        }
        Command::Selftest { seed } => {
            let (results, elapsed) = bbgky::selftest::run_all(seed);
            for r in &results {
                println!(
                    "{} {}: max error {:.3e} (tolerance {:.1e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_error,
                    r.tolerance
                );
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} suites, {failed} failed, {:.0} ms", results.len(), elapsed.as_secs_f64() * 1e3);
            Ok(u8::from(failed > 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
