mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{parse_angle, Config, ConfigError, Mode};
use output::Outputs;

/// An upstream artifact is not in the output directory.
#[derive(Debug)]
pub struct MissingInput {
    pub path: PathBuf,
    pub producer: String,
}

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} not found; run `robust-phase {}` with the same --out first",
            self.path.display(),
            self.producer
        )
    }
}

impl std::error::Error for MissingInput {}

/// Robust phase-rotation lab: syndrome sampling, logical channels, policy
/// optimization and repeat-until-success simulation on the rotated surface
/// code.
#[derive(Parser, Debug)]
#[command(name = "robust-phase", version)]
struct Cli {
    /// TOML config; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory shared by the pipeline stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Code distance.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Dephasing probability per qubit.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Rotation angle, in radians or as e.g. `0.08pi`.
    #[arg(long, global = true, value_parser = parse_angle, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Target logical angle, in radians or as e.g. `0.0625pi`.
    #[arg(long, global = true, value_parser = parse_angle, allow_hyphen_values = true)]
    target_phi: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw syndromes at every action angle (or at --theta) -> samples.csv.
    Sample,
    /// Evaluate the logical channel of every sampled syndrome -> kernel.json, channel.csv.
    Channel,
    /// Optimize one policy per target -> policy.json, policy.csv, optimize.log.jsonl.
    Optimize,
    /// Run repeat-until-success trials -> trials.jsonl, summary.csv.
    Simulate {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Dephasing-ratio sweep, half-success angles and suppression fit.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Channel => "channel",
            Command::Optimize => "optimize",
            Command::Simulate { .. } => "simulate",
            Command::Sweep => "sweep",
        }
    }
}

fn resolve(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    use std::f64::consts::PI;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(d) = cli.d {
        cfg.d = d;
        cfg.sweep.distances = vec![d];
    }
    if let Some(p) = cli.p {
        cfg.p = p;
        cfg.sweep.ps = vec![p];
    }
    if let Some(t) = cli.theta {
        cfg.sample.theta_pi = Some(t / PI);
        cfg.sweep.thetas_pi = vec![t / PI];
    }
    if let Some(t) = cli.target_phi {
        cfg.policy.targets_pi = vec![t / PI];
    }
    if let Command::Simulate { mode, trials } = &cli.command {
        if let Some(m) = mode {
            cfg.simulate.mode = *m;
        }
        if let Some(n) = trials {
            cfg.simulate.n_trials = *n;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let name = cli.command.name();
    let mut out = Outputs::create(&cli.out, name, &cfg)?;
    match cli.command {
        Command::Sample => commands::sample(&cfg, &mut out),
        Command::Channel => commands::channel(&cfg, &mut out),
        Command::Optimize => commands::optimize(&cfg, &mut out),
        Command::Simulate { .. } => commands::simulate(&cfg, &mut out),
        Command::Sweep => commands::sweep(&cfg, &mut out),
    }
}

/// 2: configuration, 3: I/O or artifact format, 4: numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use robust_phase::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if cause.is::<MissingInput>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<csv::Error>()
        {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::InvalidDistance(_)
                | E::InvalidNoise(_)
                | E::NotBracketing { .. }
                | E::OracleSize(_)
                | E::ContractionLimit { .. } => 2,
                E::Io(_) | E::Json(_) => 3,
                _ => 4,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
