use crate::agent::{ActorCritic, AgentConfig};
use crate::diagnostics::{bias_report_on, BiasReport, DEFAULT_SAMPLE_SIZE};
use crate::dynamics::DynamicsModel;
use crate::envkit::Env;
use crate::error::{Error, Result};
use crate::numkit::{Prng, Stream};
use crate::replay::{relabel_probability, Episode, ReplayBuffer};
use crate::targets::{compute_target, Dynamics, TargetConfig, TargetContext, TargetKind, TargetNets, ValueClip};

/// Per-epoch loop sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub cycles_per_epoch: usize,
    pub episodes_per_cycle: usize,
    pub eval_episodes: usize,
    /// Windows per diagnostic pass; 0 disables diagnostics.
    pub diag_sample: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { cycles_per_epoch: 10, episodes_per_cycle: 2, eval_episodes: 120, diag_sample: DEFAULT_SAMPLE_SIZE }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: u64,
    pub batches: usize,
    /// `None` when the epoch ran no cycles.
    pub success_rate: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    /// Mean main-critic `Q(s_t, a_t, g')` over the diagnostic sample.
    pub q_mean: Option<f64>,
    pub model_loss: Option<f64>,
    pub bias: Option<BiasReport>,
}

/// Everything one training run owns.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub env: Env,
    pub config: AgentConfig,
    pub target: TargetConfig,
    pub schedule: Schedule,
    pub agent: ActorCritic,
    pub buffer: ReplayBuffer,
    pub model: Option<DynamicsModel>,
    pub rng_env: Prng,
    pub rng_explore: Prng,
    pub rng_sample: Prng,
    pub rng_diag: Prng,
    pub rng_eval: Prng,
    pub rng_model: Prng,
    pub env_steps: u64,
    pub epoch: usize,
    pub warmed_up: bool,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

impl Trainer {
    /// The discount of `target` is replaced by `config.gamma`.
    pub fn new(env: Env, config: AgentConfig, mut target: TargetConfig, schedule: Schedule, seed: u64) -> Result<Self> {
        config.validate()?;
        target.gamma = config.gamma;
        target.validate()?;
        let mut init = Prng::for_stream(seed, Stream::Init);
        let agent = ActorCritic::new(&env, &config, &mut init)?;
        let model = if target.kind == TargetKind::ModelBased {
            Some(DynamicsModel::new(env.state_dim(), env.action_dim(), &config.dynamics, &mut init)?)
        } else {
            None
        };
        let buffer = ReplayBuffer::new(config.buffer_capacity, env.horizon())?;
        Ok(Self {
            env,
            config,
            target,
            schedule,
            agent,
            buffer,
            model,
            rng_env: Prng::for_stream(seed, Stream::Env),
            rng_explore: Prng::for_stream(seed, Stream::Exploration),
            rng_sample: Prng::for_stream(seed, Stream::Sampling),
            rng_diag: Prng::for_stream(seed, Stream::Diagnostics),
            rng_eval: Prng::for_stream(seed, Stream::Evaluation),
            rng_model: Prng::for_stream(seed, Stream::Model),
            env_steps: 0,
            epoch: 0,
            warmed_up: false,
        })
    }

    pub fn relabel_prob(&self) -> f64 {
        relabel_probability(self.config.relabel_k)
    }

    fn collect(&mut self, random: bool) -> Result<Episode> {
        let (start, goal) = self.env.reset(&mut self.rng_env);
        let agent = &self.agent;
        let rng = &mut self.rng_explore;
        let ad = self.env.action_dim();
        let ep = Episode::collect(&self.env, start, goal, |s, g| {
            Ok(if random {
                (0..ad).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect()
            } else {
                agent.act(s, g, true, rng)
            })
        })?;
        self.env_steps += ep.horizon() as u64;
        Ok(ep)
    }

    /// Updates the observation normalizer (and the model's normalizers)
    /// from fresh episodes, then stores them.
    fn absorb(&mut self, episodes: Vec<Episode>) -> Result<()> {
        let mut obs_rows = Vec::new();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for ep in &episodes {
            for s in &ep.states {
                obs_rows.extend_from_slice(s);
                obs_rows.extend_from_slice(&ep.desired_goal);
            }
            for (s, a) in ep.states.iter().zip(&ep.actions) {
                states.extend_from_slice(s);
                actions.extend_from_slice(a);
            }
        }
        self.agent.obs_norm.update(&obs_rows)?;
        if let Some(m) = &mut self.model {
            m.observe(&states, &actions)?;
        }
        for ep in episodes {
            self.buffer.store_episode(ep, &self.env)?;
        }
        Ok(())
    }

    /// Random-action episodes, then the dynamics warmup when model-based.
    pub fn warmup(&mut self) -> Result<Option<f64>> {
        let mut eps = Vec::with_capacity(self.config.random_init_episodes);
        for _ in 0..self.config.random_init_episodes {
            eps.push(self.collect(true)?);
        }
        self.absorb(eps)?;
        let mut last = None;
        if self.model.is_some() {
            if self.buffer.is_empty() {
                return Err(Error::config("model-based training needs random init episodes for the model warmup"));
            }
            for _ in 0..self.config.dynamics.warmup_updates {
                last = Some(self.model_step()?);
            }
        }
        self.warmed_up = true;
        Ok(last)
    }

    /// `(states, actions, next_states)` for `size` uniformly drawn stored
    /// transitions.
    pub fn sample_transitions(&self, size: usize, rng: &mut Prng) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let (mut s, mut a, mut sn) = (Vec::new(), Vec::new(), Vec::new());
        let t_max = self.buffer.horizon();
        for _ in 0..size {
            let ep = self.buffer.episode(rng.below(self.buffer.num_episodes()));
            let t = rng.below(t_max);
            s.extend_from_slice(&ep.states[t]);
            a.extend_from_slice(&ep.actions[t]);
            sn.extend_from_slice(&ep.states[t + 1]);
        }
        (s, a, sn)
    }

    fn model_step(&mut self) -> Result<f64> {
        let mut rng = self.rng_model.clone();
        let (s, a, sn) = self.sample_transitions(self.config.dynamics.batch_size, &mut rng);
        self.rng_model = rng;
        self.model.as_mut().expect("model step without a model").train_step(&s, &a, &sn)
    }

    /// One sample / target / critic / actor / Polyak round. Returns the
    /// critic and actor losses and the mean model loss if one was trained.
    pub fn train_batch(&mut self) -> Result<(f64, f64, Option<f64>)> {
        let mut model_losses = Vec::new();
        if self.model.is_some() {
            for _ in 0..self.config.dynamics.updates_per_batch {
                model_losses.push(self.model_step()?);
            }
        }
        let p = self.relabel_prob();
        let samples =
            self.buffer.sample_batch(&self.env, self.config.batch_size, self.target.window_n(), p, &mut self.rng_sample)?;
        let clip = ValueClip::for_gamma(self.target.gamma);
        let targets = {
            let critic_t = self.agent.critic_view(true);
            let policy_t = self.agent.policy_view(true);
            let policy = self.agent.policy_view(false);
            let ctx = TargetContext {
                env: &self.env,
                nets: TargetNets::new(&critic_t, &policy_t, Some(clip)),
                rollout_policy: &policy,
                model: self.model.as_ref().map(|m| m as &dyn Dynamics),
            };
            samples
                .iter()
                .map(|s| compute_target(&self.target, &ctx, &self.buffer.window(s), s).map(|y| clip.apply(y)))
                .collect::<Result<Vec<f64>>>()?
        };
        let batch = self.agent.make_batch(samples.iter().map(|s| {
            let w = self.buffer.window(s);
            (w.state(0), s.goal.as_slice(), w.action(0))
        }));
        let critic_loss = self.agent.critic_update(&batch, &targets)?;
        let actor_loss = self.agent.actor_update(&batch)?;
        self.agent.polyak_update();
        Ok((critic_loss, actor_loss, mean(&model_losses)))
    }

    /// Greedy-policy success rate over `episodes` fresh goals.
    pub fn evaluate(&mut self, episodes: usize) -> Result<f64> {
        evaluate(&self.agent, &self.env, episodes, &mut self.rng_eval)
    }

    /// Bias report and mean main-critic value on one relabeled sample of
    /// windows of the target's `n`.
    pub fn diagnose(&mut self) -> Result<(BiasReport, f64)> {
        let p = self.relabel_prob();
        let n = self.target.n;
        let samples = self.buffer.sample_batch(&self.env, self.schedule.diag_sample, n, p, &mut self.rng_diag)?;
        let critic_t = self.agent.critic_view(true);
        let policy_t = self.agent.policy_view(true);
        let nets = TargetNets::new(&critic_t, &policy_t, Some(ValueClip::for_gamma(self.target.gamma)));
        let report = bias_report_on(&self.buffer, &samples, &nets, self.target.gamma, n, self.epoch)?;
        let batch = self.agent.make_batch(samples.iter().map(|s| {
            let w = self.buffer.window(s);
            (w.state(0), s.goal.as_slice(), w.action(0))
        }));
        let q = self.agent.critic_values(&batch)?;
        Ok((report, q.iter().sum::<f64>() / q.len() as f64))
    }

    /// Collection and training cycles, then evaluation and diagnostics.
    /// An epoch with zero cycles changes nothing.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        self.epoch += 1;
        if self.schedule.cycles_per_epoch == 0 {
            return Ok(EpochMetrics {
                epoch,
                env_steps: self.env_steps,
                batches: 0,
                success_rate: None,
                critic_loss: None,
                actor_loss: None,
                q_mean: None,
                model_loss: None,
                bias: None,
            });
        }
        let mut model_losses = Vec::new();
        if !self.warmed_up {
            model_losses.extend(self.warmup()?);
        }
        let (mut closs, mut aloss) = (Vec::new(), Vec::new());
        for _ in 0..self.schedule.cycles_per_epoch {
            let mut eps = Vec::with_capacity(self.schedule.episodes_per_cycle);
            for _ in 0..self.schedule.episodes_per_cycle {
                eps.push(self.collect(false)?);
            }
            self.absorb(eps)?;
            for _ in 0..self.config.batches_per_cycle {
                let (c, a, m) = self.train_batch()?;
                closs.push(c);
                aloss.push(a);
                model_losses.extend(m);
            }
        }
        let success = self.evaluate(self.schedule.eval_episodes)?;
        let (bias, q_mean) = if self.schedule.diag_sample > 0 {
            let (r, q) = self.diagnose()?;
            (Some(r), Some(q))
        } else {
            (None, None)
        };
        Ok(EpochMetrics {
            epoch,
            env_steps: self.env_steps,
            batches: closs.len(),
            success_rate: Some(success),
            critic_loss: mean(&closs),
            actor_loss: mean(&aloss),
            q_mean,
            model_loss: if self.model.is_some() { mean(&model_losses) } else { None },
            bias,
        })
    }
}

/// Fraction of noise-free episodes whose final step earns reward 0.
pub fn evaluate(agent: &ActorCritic, env: &Env, episodes: usize, rng: &mut Prng) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let mut wins = 0;
    for _ in 0..episodes {
        let (start, goal) = env.reset(rng);
        let ep = Episode::collect(env, start, goal, |s, g| Ok(agent.policy_action(s, g)))?;
        if ep.final_success() {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes as f64)
}
