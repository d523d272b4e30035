//! Goal-conditioned deterministic actor-critic with Polyak target copies.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{evaluate, EpochMetrics, Schedule, Trainer};

use crate::dynamics::{DynamicsConfig, Normalizer};
use crate::envkit::{Action, Env};
use crate::error::{check_len, Error, Result};
use crate::numkit::{backward_batch, forward_batch, AdamState, MlpSpec, OutputActivation, ParamVector, Prng, Real};
use crate::replay::DEFAULT_CAPACITY;
use crate::targets::{GoalCritic, GoalPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub polyak: f64,
    pub action_noise_std: f64,
    pub random_action_prob: f64,
    pub action_l2_penalty: f64,
    pub obs_clip: f64,
    pub normalized_obs_clip: f64,
    pub batch_size: usize,
    pub batches_per_cycle: usize,
    pub random_init_episodes: usize,
    pub hidden: usize,
    pub depth: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Relabeled goals per real one; the relabel probability is `k/(1+k)`.
    pub relabel_k: f64,
    pub buffer_capacity: usize,
    pub dynamics: DynamicsConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            polyak: 0.95,
            action_noise_std: 0.2,
            random_action_prob: 0.3,
            action_l2_penalty: 1.0,
            obs_clip: 200.0,
            normalized_obs_clip: 5.0,
            batch_size: 256,
            batches_per_cycle: 40,
            random_init_episodes: 20,
            hidden: 64,
            depth: 2,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            relabel_k: 4.0,
            buffer_capacity: DEFAULT_CAPACITY,
            dynamics: DynamicsConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 10] = [
            ((0.0..1.0).contains(&self.gamma), "gamma must lie in [0, 1)"),
            (self.polyak > 0.0 && self.polyak < 1.0, "polyak must lie in (0, 1)"),
            (self.action_noise_std >= 0.0, "action noise std must be non-negative"),
            ((0.0..=1.0).contains(&self.random_action_prob), "random action probability must lie in [0, 1]"),
            (self.action_l2_penalty >= 0.0, "action penalty must be non-negative"),
            (self.obs_clip > 0.0 && self.normalized_obs_clip > 0.0, "observation clips must be positive"),
            (self.batch_size > 0, "batch size must be positive"),
            (self.hidden > 0 && self.depth > 0, "networks need at least one non-empty hidden layer"),
            (self.actor_lr > 0.0 && self.critic_lr > 0.0, "learning rates must be positive"),
            (self.relabel_k >= 0.0 && self.relabel_k.is_finite(), "relabel k must be a non-negative number"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(msg));
            }
        }
        let d = &self.dynamics;
        if d.hidden == 0 || d.depth == 0 || d.batch_size == 0 || !(d.learning_rate > 0.0) {
            return Err(Error::config("dynamics model settings must be positive"));
        }
        Ok(())
    }
}

/// Normalizer over `state ++ goal` with raw and normalized clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsNormalizer {
    pub stats: Normalizer,
    pub clip_raw: f64,
    pub clip_norm: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize, clip_raw: f64, clip_norm: f64) -> Self {
        Self { stats: Normalizer::new(dim), clip_raw, clip_norm }
    }

    fn clip_raw(&self, v: f32) -> f32 {
        (v as f64).clamp(-self.clip_raw, self.clip_raw) as f32
    }

    /// Updates from row-major `state ++ goal` rows.
    pub fn update(&mut self, rows: &[f32]) -> Result<()> {
        let clipped: Vec<f32> = rows.iter().map(|v| self.clip_raw(*v)).collect();
        self.stats.update(&clipped)
    }

    /// Appends the normalized `state ++ goal` to `out`.
    pub fn normalize_into(&self, state: &[f32], goal: &[f32], out: &mut Vec<f32>) {
        for (i, v) in state.iter().chain(goal).enumerate() {
            let z = (self.clip_raw(*v) as f64 - self.stats.mean()[i]) / self.stats.std(i);
            out.push(z.clamp(-self.clip_norm, self.clip_norm) as f32);
        }
    }

    pub fn normalize(&self, state: &[f32], goal: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(state.len() + goal.len());
        self.normalize_into(state, goal, &mut out);
        out
    }
}

/// Training inputs: normalized observations and stored actions, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub actor: ParamVector,
    pub critic: ParamVector,
    pub actor_target: ParamVector,
    pub critic_target: ParamVector,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    pub obs_norm: ObsNormalizer,
    pub action_l2_penalty: f64,
    pub polyak: f64,
    pub action_noise_std: f64,
    pub random_action_prob: f64,
}

impl ActorCritic {
    pub fn new(env: &Env, config: &AgentConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let obs_dim = env.state_dim() + env.goal_dim();
        let action_dim = env.action_dim();
        let actor_spec =
            MlpSpec::with_hidden(obs_dim, config.hidden, config.depth, action_dim, OutputActivation::Tanh)?;
        let critic_spec =
            MlpSpec::with_hidden(obs_dim + action_dim, config.hidden, config.depth, 1, OutputActivation::Linear)?;
        let actor = actor_spec.init_params(rng);
        let critic = critic_spec.init_params(rng);
        Ok(Self {
            obs_dim,
            action_dim,
            actor_adam: AdamState::new(actor.len(), config.actor_lr),
            critic_adam: AdamState::new(critic.len(), config.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_spec,
            critic_spec,
            actor,
            critic,
            obs_norm: ObsNormalizer::new(obs_dim, config.obs_clip, config.normalized_obs_clip),
            action_l2_penalty: config.action_l2_penalty,
            polyak: config.polyak,
            action_noise_std: config.action_noise_std,
            random_action_prob: config.random_action_prob,
        })
    }

    /// Deterministic main-actor action.
    pub fn policy_action(&self, state: &[f32], goal: &[f32]) -> Action {
        self.policy_view(false).action(state, goal)
    }

    /// With `explore`, a uniform random action with probability
    /// `random_action_prob`, otherwise the actor's action plus Gaussian
    /// noise, clipped to `[-1, 1]`. Without it, the raw actor action.
    pub fn act(&self, state: &[f32], goal: &[f32], explore: bool, rng: &mut Prng) -> Action {
        let a = self.policy_action(state, goal);
        if !explore {
            return a;
        }
        if rng.bernoulli(self.random_action_prob) {
            return (0..self.action_dim).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        }
        a.iter()
            .map(|x| ((*x as f64 + self.action_noise_std * rng.normal()).clamp(-1.0, 1.0)) as f32)
            .collect()
    }

    pub fn policy_view(&self, target: bool) -> PolicyView<'_> {
        PolicyView {
            spec: &self.actor_spec,
            params: if target { &self.actor_target } else { &self.actor },
            norm: &self.obs_norm,
        }
    }

    pub fn critic_view(&self, target: bool) -> CriticView<'_> {
        CriticView {
            spec: &self.critic_spec,
            params: if target { &self.critic_target } else { &self.critic },
            norm: &self.obs_norm,
        }
    }

    /// Builds a training batch from raw `(state, goal, action)` rows.
    pub fn make_batch<'a>(&self, rows: impl IntoIterator<Item = (&'a [f32], &'a [f32], &'a [f32])>) -> Batch {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut len = 0;
        for (s, g, a) in rows {
            self.obs_norm.normalize_into(s, g, &mut obs);
            actions.extend_from_slice(a);
            len += 1;
        }
        Batch { obs, actions, len }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.len == 0 {
            return Err(Error::config("empty training batch"));
        }
        check_len("batch observations", batch.obs.len(), batch.len * self.obs_dim)?;
        check_len("batch actions", batch.actions.len(), batch.len * self.action_dim)
    }

    /// Main-critic `Q(s, a, g)` for every batch row.
    pub fn critic_values(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let x = critic_inputs(&batch.obs, &batch.actions, self.obs_dim, self.action_dim);
        let tape = forward_batch(&self.critic_spec, self.critic.as_slice(), &x, batch.len)?;
        Ok(tape.output().iter().map(|q| *q as f64).collect())
    }

    /// Mean squared TD error and its gradient at `critic` parameters of
    /// any precision.
    pub fn critic_objective<T: Real>(&self, batch: &Batch, targets: &[f64], critic: &[T]) -> Result<(f64, Vec<T>)> {
        self.check_batch(batch)?;
        check_len("critic targets", targets.len(), batch.len)?;
        let x: Vec<T> = critic_inputs(&batch.obs, &batch.actions, self.obs_dim, self.action_dim)
            .into_iter()
            .map(|v| T::from_f64(v as f64))
            .collect();
        let tape = forward_batch(&self.critic_spec, critic, &x, batch.len)?;
        let n = batch.len as f64;
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(batch.len);
        for (q, y) in tape.output().iter().zip(targets) {
            let e = q.to_f64() - y;
            loss += e * e;
            upstream.push(T::from_f64(2.0 * e / n));
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::training(format!("critic loss is not finite ({loss})")));
        }
        let g = backward_batch(&self.critic_spec, critic, &tape, &upstream, true, false)?;
        Ok((loss, g.params))
    }

    /// One Adam step on the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let (loss, grads) = self.critic_objective(batch, targets, self.critic.as_slice())?;
        self.critic_adam.step(self.critic.as_mut_slice(), &grads)?;
        Ok(loss)
    }

    /// `-mean Q(s, pi(s, g), g) + penalty * mean ||pi(s, g)||^2` through the
    /// main critic, and its gradient at `actor` parameters of any precision.
    pub fn actor_objective<T: Real>(&self, batch: &Batch, actor: &[T]) -> Result<(f64, Vec<T>)> {
        self.check_batch(batch)?;
        let n = batch.len;
        let obs: Vec<T> = batch.obs.iter().map(|v| T::from_f64(*v as f64)).collect();
        let critic: Vec<T> = self.critic.as_slice().iter().map(|v| T::from_f64(*v as f64)).collect();
        let atape = forward_batch(&self.actor_spec, actor, &obs, n)?;
        let actions = atape.output();
        let x = critic_inputs(&obs, actions, self.obs_dim, self.action_dim);
        let ctape = forward_batch(&self.critic_spec, &critic, &x, n)?;
        let nf = n as f64;
        let mut loss = 0.0;
        for q in ctape.output() {
            loss -= q.to_f64();
        }
        for a in actions {
            loss += self.action_l2_penalty * a.to_f64() * a.to_f64();
        }
        loss /= nf;
        if !loss.is_finite() {
            return Err(Error::training(format!("actor loss is not finite ({loss})")));
        }
        let up_q = vec![T::from_f64(-1.0 / nf); n];
        let cg = backward_batch(&self.critic_spec, &critic, &ctape, &up_q, false, true)?;
        let in_dim = self.obs_dim + self.action_dim;
        let mut up_a = Vec::with_capacity(n * self.action_dim);
        for (row, a_row) in cg.inputs.chunks_exact(in_dim).zip(actions.chunks_exact(self.action_dim)) {
            for (dq, a) in row[self.obs_dim..].iter().zip(a_row) {
                up_a.push(T::from_f64(dq.to_f64() + 2.0 * self.action_l2_penalty * a.to_f64() / nf));
            }
        }
        let ag = backward_batch(&self.actor_spec, actor, &atape, &up_a, true, false)?;
        Ok((loss, ag.params))
    }

    /// One Adam step on the actor; returns the pre-step loss.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grads) = self.actor_objective(batch, self.actor.as_slice())?;
        self.actor_adam.step(self.actor.as_mut_slice(), &grads)?;
        Ok(loss)
    }

    /// `target <- polyak * target + (1 - polyak) * main` for both networks.
    pub fn polyak_update(&mut self) {
        let p = self.polyak;
        for (t, m) in [(&mut self.actor_target, &self.actor), (&mut self.critic_target, &self.critic)] {
            for (tv, mv) in t.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *tv = (p * *tv as f64 + (1.0 - p) * *mv as f64) as f32;
            }
        }
    }
}

fn critic_inputs<T: Real>(obs: &[T], actions: &[T], obs_dim: usize, action_dim: usize) -> Vec<T> {
    let mut x = Vec::with_capacity(obs.len() + actions.len());
    for (o, a) in obs.chunks_exact(obs_dim).zip(actions.chunks_exact(action_dim)) {
        x.extend_from_slice(o);
        x.extend_from_slice(a);
    }
    x
}

/// An actor parameter set read through the observation normalizer.
#[derive(Clone, Copy)]
pub struct PolicyView<'a> {
    pub spec: &'a MlpSpec,
    pub params: &'a ParamVector,
    pub norm: &'a ObsNormalizer,
}

impl GoalPolicy for PolicyView<'_> {
    fn action(&self, state: &[f32], goal: &[f32]) -> Action {
        let x = self.norm.normalize(state, goal);
        let tape = forward_batch(self.spec, self.params.as_slice(), &x, 1).expect("actor input matches its spec");
        tape.output().to_vec()
    }
}

/// A critic parameter set read through the observation normalizer.
#[derive(Clone, Copy)]
pub struct CriticView<'a> {
    pub spec: &'a MlpSpec,
    pub params: &'a ParamVector,
    pub norm: &'a ObsNormalizer,
}

impl GoalCritic for CriticView<'_> {
    fn q(&self, state: &[f32], action: &[f32], goal: &[f32]) -> f64 {
        let mut x = Vec::with_capacity(self.spec.input_size());
        self.norm.normalize_into(state, goal, &mut x);
        x.extend_from_slice(action);
        let tape = forward_batch(self.spec, self.params.as_slice(), &x, 1).expect("critic input matches its spec");
        tape.output()[0] as f64
    }
}
