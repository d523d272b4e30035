use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::envkit::EnvKind;
use crate::error::{Error, Result};
use crate::harness::{aggregate, run, Overrides, RunConfig, AGGREGATE_FILE};
use crate::targets::TargetKind;

/// Multi-goal RL runs with one-step, n-step, lambda and model-based targets.
///
/// Without a subcommand, trains one run. Flags override values from
/// `--config`, which override the built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "mher", version, args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run (same flags as the bare command).
    Run(RunArgs),
    /// Median and interquartile range of test success across run directories.
    Aggregate {
        /// Output file; defaults to aggregate.csv in the current directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Key=value configuration file (`#` starts a comment).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvKind>,
    #[arg(long, value_parser = parse_target)]
    pub target: Option<TargetKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Relabeled goals per real goal.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub episodes_per_cycle: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn parse_env(s: &str) -> std::result::Result<EnvKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_target(s: &str) -> std::result::Result<TargetKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut o = Overrides::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::usage(format!("cannot read config file {}: {e}", path.display())))?;
            o.parse_file(&text)?;
        }
        let flags: [(&str, Option<String>); 14] = [
            ("env", self.env.map(|v| v.to_string())),
            ("target", self.target.map(|v| v.to_string())),
            ("n", self.n.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("cycles", self.cycles.map(|v| v.to_string())),
            ("episodes_per_cycle", self.episodes_per_cycle.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("eval_episodes", self.eval_episodes.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("out_dir", self.out_dir.as_ref().map(|v| v.display().to_string())),
        ];
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            o.set(k.trim(), v.trim())?;
        }
        for (k, v) in flags {
            if let Some(v) = v {
                o.set(k, v)?;
            }
        }
        o.build()
    }
}

/// Parses a full argument vector (program name first) into a run config.
pub fn parse_cli<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::usage(e.to_string()))?;
    match cli.command {
        None => cli.run.to_config(),
        Some(Command::Run(args)) => args.to_config(),
        Some(Command::Aggregate { .. }) => Err(Error::usage("aggregate does not describe a run")),
    }
}

/// Exit code of a failed run: 3 for training failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Training(_) => 3,
        _ => 2,
    }
}

/// Runs the command line and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Some(Command::Aggregate { out, runs }) => aggregate(&runs).and_then(|text| {
            let path = out.unwrap_or_else(|| PathBuf::from(AGGREGATE_FILE));
            fs::write(&path, text).map_err(Error::from)
        }),
        Some(Command::Run(args)) => args.to_config().and_then(|c| run(&c).map(|_| ())),
        None => cli.run.to_config().and_then(|c| run(&c).map(|_| ())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mher: {e}");
            exit_code(&e)
        }
    }
}
