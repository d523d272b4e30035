//! Experiment runner: configuration, CSV metrics, checkpoints and
//! multi-seed aggregation.

mod cli;
mod config;

pub use cli::{exit_code, main_with_args, parse_cli, Cli, Command, RunArgs};
pub use config::{Overrides, RunConfig, KEYS};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::agent::{save_checkpoint, EpochMetrics, Trainer};
use crate::envkit::Env;
use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "# mher-metrics v1";
pub const METRICS_HEADER: &str =
    "epoch,env_steps,test_success_rate,critic_loss,actor_loss,q_mean,abs_avg_reward,avg_bias_n,prop2_bound,model_loss";
pub const AGGREGATE_SCHEMA: &str =
    "# mher-aggregate v1; percentiles interpolate linearly between closest ranks at position (N-1)q";
pub const AGGREGATE_HEADER: &str = "epoch,env_steps,runs,success_median,success_p25,success_p75";

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// `printf("%.6g")`: six significant digits, trailing zeros removed,
/// exponent form below 1e-4 and from 1e6.
pub fn fmt_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g6).unwrap_or_default()
}

/// One CSV line (without the newline) for an epoch.
pub fn metrics_row(m: &EpochMetrics) -> String {
    let bias = m.bias.as_ref();
    [
        m.epoch.to_string(),
        m.env_steps.to_string(),
        opt(m.success_rate),
        opt(m.critic_loss),
        opt(m.actor_loss),
        opt(m.q_mean),
        opt(bias.map(|b| b.abs_avg_reward)),
        opt(bias.map(|b| b.avg_bias)),
        opt(bias.and_then(|b| b.prop2_bound)),
        opt(m.model_loss),
    ]
    .join(",")
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Trains for `config.epochs` epochs, writing the config snapshot,
/// `metrics.csv` (flushed per epoch) and a final checkpoint into
/// `config.out_dir`. Returns the per-epoch metrics.
pub fn run(config: &RunConfig) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_snapshot()).map_err(|e| io_context(&cfg_path, e))?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut csv = fs::File::create(&metrics_path).map_err(|e| io_context(&metrics_path, e))?;
    write!(csv, "{METRICS_SCHEMA}\n{METRICS_HEADER}\n").map_err(|e| io_context(&metrics_path, e))?;

    let env = Env::new(config.env.clone())?;
    let mut trainer =
        Trainer::new(env, config.agent.clone(), config.target.clone(), config.schedule, config.seed)?;
    let mut all = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let m = trainer.train_epoch()?;
        writeln!(csv, "{}", metrics_row(&m)).map_err(|e| io_context(&metrics_path, e))?;
        csv.flush().map_err(|e| io_context(&metrics_path, e))?;
        all.push(m);
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&trainer, &ckpt).map_err(|e| match e {
        Error::Io(io) => io_context(&ckpt, io),
        other => other,
    })?;
    Ok(all)
}

/// Linear interpolation between closest ranks: position `(N-1)q` in the
/// sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of nothing");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

/// Per-epoch `(epoch, env_steps, test_success_rate)` from a metrics file.
pub fn read_success_curve(path: &Path) -> Result<Vec<(usize, u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::usage(format!("{}: unexpected metrics header", path.display())));
    }
    let bad = || Error::usage(format!("{}: malformed metrics row", path.display()));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() < 3 {
                return Err(bad());
            }
            let success = if f[2].is_empty() { f64::NAN } else { f[2].parse().map_err(|_| bad())? };
            Ok((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?, success))
        })
        .collect()
}

/// Median and quartiles of test success across runs, per epoch, as the
/// text of `aggregate.csv`.
pub fn aggregate(run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.len() < 2 {
        return Err(Error::usage("aggregate needs at least two run directories"));
    }
    let curves: Vec<Vec<(usize, u64, f64)>> =
        run_dirs.iter().map(|d| read_success_curve(&d.join(METRICS_FILE))).collect::<Result<_>>()?;
    let grid: Vec<usize> = curves[0].iter().map(|r| r.0).collect();
    for (c, d) in curves.iter().zip(run_dirs).skip(1) {
        if c.iter().map(|r| r.0).ne(grid.iter().copied()) {
            return Err(Error::usage(format!("{}: epoch grid differs from {}", d.display(), run_dirs[0].display())));
        }
    }
    let mut out = format!("{AGGREGATE_SCHEMA}\n{AGGREGATE_HEADER}\n");
    for (i, epoch) in grid.iter().enumerate() {
        let mut s: Vec<f64> = curves.iter().map(|c| c[i].2).collect();
        s.sort_by(f64::total_cmp);
        let steps: Vec<f64> = curves.iter().map(|c| c[i].1 as f64).collect();
        out.push_str(&format!(
            "{epoch},{},{},{},{},{}\n",
            fmt_g6(median(&steps)),
            s.len(),
            fmt_g6(percentile(&s, 0.5)),
            fmt_g6(percentile(&s, 0.25)),
            fmt_g6(percentile(&s, 0.75)),
        ));
    }
    Ok(out)
}
