use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{AgentConfig, Schedule};
use crate::envkit::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::targets::TargetConfig;

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub target: TargetConfig,
    pub schedule: Schedule,
    pub epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        Self {
            env: EnvConfig::defaults(EnvKind::PointReach2d),
            target: TargetConfig { gamma: agent.gamma, ..TargetConfig::default() },
            agent,
            schedule: Schedule::default(),
            epochs: 10,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Recognized keys, in snapshot order.
pub const KEYS: &[&str] = &[
    "env",
    "horizon",
    "threshold",
    "bits",
    "chain_len",
    "goal_range",
    "target",
    "n",
    "lambda",
    "alpha",
    "k",
    "gamma",
    "polyak",
    "action_noise_std",
    "random_action_prob",
    "action_l2_penalty",
    "obs_clip",
    "normalized_obs_clip",
    "batch_size",
    "batches_per_cycle",
    "random_init_episodes",
    "hidden",
    "depth",
    "actor_lr",
    "critic_lr",
    "buffer_capacity",
    "model_hidden",
    "model_depth",
    "model_lr",
    "model_batch_size",
    "model_warmup_updates",
    "model_updates_per_batch",
    "epochs",
    "cycles",
    "episodes_per_cycle",
    "eval_episodes",
    "diag_sample",
    "seed",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::usage(format!("invalid value '{value}' for {key}")))
}

/// Ordered key/value overrides; later entries win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides(BTreeMap<String, String>);

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::usage(format!("unknown configuration key '{key}'")));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Reads `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("line {}: expected key=value, got '{raw}'", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults overlaid with these values. The environment kind is applied
    /// first so its defaults (for example the bitflip horizon) sit under
    /// any explicit settings.
    pub fn build(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(v) = self.get("env") {
            c.env = EnvConfig::defaults(parse::<EnvKind>("env", v)?);
        }
        if let Some(v) = self.get("bits") {
            let bits = parse("bits", v)?;
            c.env.bits = bits;
            if c.env.kind == EnvKind::BitflipContinuous {
                c.env.horizon = bits;
            }
        }
        for (key, v) in &self.0 {
            let v = v.as_str();
            let k = key.as_str();
            match k {
                "env" | "bits" => {}
                "horizon" => c.env.horizon = parse(k, v)?,
                "threshold" => c.env.threshold = parse(k, v)?,
                "chain_len" => c.env.chain_len = parse(k, v)?,
                "goal_range" => c.env.goal_range = parse(k, v)?,
                "target" => c.target.kind = parse(k, v)?,
                "n" => c.target.n = parse(k, v)?,
                "lambda" => c.target.lambda = parse(k, v)?,
                "alpha" => c.target.alpha = parse(k, v)?,
                "k" => c.agent.relabel_k = parse(k, v)?,
                "gamma" => c.agent.gamma = parse(k, v)?,
                "polyak" => c.agent.polyak = parse(k, v)?,
                "action_noise_std" => c.agent.action_noise_std = parse(k, v)?,
                "random_action_prob" => c.agent.random_action_prob = parse(k, v)?,
                "action_l2_penalty" => c.agent.action_l2_penalty = parse(k, v)?,
                "obs_clip" => c.agent.obs_clip = parse(k, v)?,
                "normalized_obs_clip" => c.agent.normalized_obs_clip = parse(k, v)?,
                "batch_size" => c.agent.batch_size = parse(k, v)?,
                "batches_per_cycle" => c.agent.batches_per_cycle = parse(k, v)?,
                "random_init_episodes" => c.agent.random_init_episodes = parse(k, v)?,
                "hidden" => c.agent.hidden = parse(k, v)?,
                "depth" => c.agent.depth = parse(k, v)?,
                "actor_lr" => c.agent.actor_lr = parse(k, v)?,
                "critic_lr" => c.agent.critic_lr = parse(k, v)?,
                "buffer_capacity" => c.agent.buffer_capacity = parse(k, v)?,
                "model_hidden" => c.agent.dynamics.hidden = parse(k, v)?,
                "model_depth" => c.agent.dynamics.depth = parse(k, v)?,
                "model_lr" => c.agent.dynamics.learning_rate = parse(k, v)?,
                "model_batch_size" => c.agent.dynamics.batch_size = parse(k, v)?,
                "model_warmup_updates" => c.agent.dynamics.warmup_updates = parse(k, v)?,
                "model_updates_per_batch" => c.agent.dynamics.updates_per_batch = parse(k, v)?,
                "epochs" => c.epochs = parse(k, v)?,
                "cycles" => c.schedule.cycles_per_epoch = parse(k, v)?,
                "episodes_per_cycle" => c.schedule.episodes_per_cycle = parse(k, v)?,
                "eval_episodes" => c.schedule.eval_episodes = parse(k, v)?,
                "diag_sample" => c.schedule.diag_sample = parse(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                "out_dir" => c.out_dir = PathBuf::from(v),
                other => return Err(Error::usage(format!("unknown configuration key '{other}'"))),
            }
        }
        c.target.gamma = c.agent.gamma;
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.target.validate()?;
        if self.schedule.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive"));
        }
        if self.target.gamma != self.agent.gamma {
            return Err(Error::config("target and agent discount differ"));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key=value` per line.
    /// Parsing the result with [`Overrides::parse_file`] and
    /// [`Overrides::build`] gives back an equal config.
    pub fn to_snapshot(&self) -> String {
        let a = &self.agent;
        let d = &a.dynamics;
        let e = &self.env;
        let t = &self.target;
        let s = &self.schedule;
        let values: Vec<String> = vec![
            e.kind.to_string(),
            e.horizon.to_string(),
            e.threshold.to_string(),
            e.bits.to_string(),
            e.chain_len.to_string(),
            e.goal_range.to_string(),
            t.kind.to_string(),
            t.n.to_string(),
            t.lambda.to_string(),
            t.alpha.to_string(),
            a.relabel_k.to_string(),
            a.gamma.to_string(),
            a.polyak.to_string(),
            a.action_noise_std.to_string(),
            a.random_action_prob.to_string(),
            a.action_l2_penalty.to_string(),
            a.obs_clip.to_string(),
            a.normalized_obs_clip.to_string(),
            a.batch_size.to_string(),
            a.batches_per_cycle.to_string(),
            a.random_init_episodes.to_string(),
            a.hidden.to_string(),
            a.depth.to_string(),
            a.actor_lr.to_string(),
            a.critic_lr.to_string(),
            a.buffer_capacity.to_string(),
            d.hidden.to_string(),
            d.depth.to_string(),
            d.learning_rate.to_string(),
            d.batch_size.to_string(),
            d.warmup_updates.to_string(),
            d.updates_per_batch.to_string(),
            self.epochs.to_string(),
            s.cycles_per_epoch.to_string(),
            s.episodes_per_cycle.to_string(),
            s.eval_episodes.to_string(),
            s.diag_sample.to_string(),
            self.seed.to_string(),
            self.out_dir.display().to_string(),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::from("# resolved run configuration\n");
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut o = Overrides::default();
        o.parse_file(text)?;
        o.build()
    }
}
