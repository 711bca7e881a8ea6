//! Experiment driver: configuration, orchestration, and report files.

mod commands;
mod harness;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use voltsim_core::config::ExperimentConfig;
use voltsim_core::sim::SimError;

/// Exit code for usage and configuration errors.
const EXIT_USAGE: u8 = 1;
/// Exit code for internal invariant violations.
const EXIT_INTERNAL: u8 = 2;

#[derive(Parser)]
#[command(name = "voltsim", about = "Voltage-aware DRAM system simulator", disable_version_flag = true)]
struct Cli {
    /// Config file path; falls back to the VOLTSIM_CONFIG environment
    /// variable.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and comparisons.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Config overrides as dotted key paths, e.g.
    /// `--set policy.kind=voltron --set geometry.banks_per_rank=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured workload mix under the configured policy.
    Simulate,
    /// Error-fraction, energy, and ECC curves over an array-voltage sweep at
    /// fixed timings.
    SweepVoltage {
        /// Comma list ("1.35,1.30") or range ("1.35:1.00:0.05"); defaults to
        /// the profile grid extended one step below the floor.
        #[arg(long)]
        voltages: Option<String>,
        /// Fixed activation latency in ns (defaults to the config timing).
        #[arg(long)]
        t_rcd: Option<f64>,
        /// Fixed precharge latency in ns.
        #[arg(long)]
        t_rp: Option<f64>,
        /// Fixed restoration window in ns.
        #[arg(long)]
        t_ras: Option<f64>,
        /// When set, compensates timings per voltage instead of fixing them.
        #[arg(long, default_value_t = false)]
        compensated: bool,
        /// Monte-Carlo cache lines sampled per voltage.
        #[arg(long, default_value_t = 1_000_000)]
        mc_lines: u64,
        /// Monte-Carlo ECC trials per voltage.
        #[arg(long, default_value_t = 200_000)]
        ecc_trials: u64,
    },
    /// Compare policies on the configured suite against the nominal
    /// baseline.
    Compare {
        /// Comma-separated policies: nominal, voltron, voltron_region_aware,
        /// memdvfs, static_v:<volts>.
        #[arg(long)]
        policies: String,
    },
    /// Per-(bank,row) error map with clustering and ECC coverage reports.
    Errmap {
        #[arg(long)]
        voltage: f64,
        #[arg(long)]
        t_rcd: Option<f64>,
        #[arg(long)]
        t_rp: Option<f64>,
        #[arg(long)]
        t_ras: Option<f64>,
        /// Monte-Carlo ECC trials.
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
    },
    /// Calibrate the performance-loss model on the configured suite.
    FitLossModel {
        /// Candidate voltages (same syntax as sweep-voltage); defaults to the
        /// profile grid below nominal.
        #[arg(long)]
        voltages: Option<String>,
    },
}

/// Error wrapper distinguishing usage problems from internal invariant
/// violations.
pub enum CliError {
    Usage(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::ZeroAloneIpc => CliError::Usage(e.into()),
            SimError::Timing(_)
            | SimError::RefreshDeadlineMissed { .. }
            | SimError::RefreshIntervalChanged { .. }
            | SimError::Voltage(_)
            | SimError::Policy(_) => CliError::Internal(e.into()),
        }
    }
}

impl From<voltsim_core::config::ConfigError> for CliError {
    fn from(e: voltsim_core::config::ConfigError) -> Self {
        CliError::Usage(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is usage.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .map_err(|e| CliError::Usage(anyhow!("cannot size worker pool: {e}")))?;

    let (mut config, base_dir) = load_config(&cli)?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;

    match &cli.command {
        Cmd::Simulate => commands::simulate(&config, &base_dir),
        Cmd::SweepVoltage { voltages, t_rcd, t_rp, t_ras, compensated, mc_lines, ecc_trials } => {
            commands::sweep_voltage(
                &config,
                voltages.as_deref(),
                commands::FixedTimings { t_rcd: *t_rcd, t_rp: *t_rp, t_ras: *t_ras },
                *compensated,
                *mc_lines,
                *ecc_trials,
            )
        }
        Cmd::Compare { policies } => commands::compare(&config, &base_dir, policies),
        Cmd::Errmap { voltage, t_rcd, t_rp, t_ras, trials } => commands::errmap(
            &config,
            *voltage,
            commands::FixedTimings { t_rcd: *t_rcd, t_rp: *t_rp, t_ras: *t_ras },
            *trials,
        ),
        Cmd::FitLossModel { voltages } => {
            commands::fit_loss_model(&config, &base_dir, voltages.as_deref())
        }
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("VOLTSIM_CONFIG").map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Usage(anyhow!("no config: pass --config or set VOLTSIM_CONFIG"))
        })?;
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(CliError::Usage)?;
    let mut value: toml::Value = toml::from_str(&text)
        .with_context(|| format!("cannot parse config {}", path.display()))
        .map_err(CliError::Usage)?;
    for assignment in &cli.set {
        apply_override(&mut value, assignment).map_err(CliError::Usage)?;
    }
    let config: ExperimentConfig = value
        .try_into()
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(CliError::Usage)?;
    let base_dir = path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    Ok((config, base_dir))
}

/// Applies one `key.path=value` override onto the parsed config tree.
fn apply_override(root: &mut toml::Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {assignment:?}"))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set {key}: `{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}
