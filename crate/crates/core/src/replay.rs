//! Episodic replay with "future" hindsight relabeling and n-step windows.

use std::collections::VecDeque;

use crate::envkit::{Action, Env, Goal, State};
use crate::error::{Error, Result};
use crate::numkit::Prng;

/// Default buffer capacity in transitions.
pub const DEFAULT_CAPACITY: usize = 1_000_000;

/// `k / (1 + k)`: probability that a sampled transition is relabeled when
/// `k` relabeled goals are used per original one.
pub fn relabel_probability(k: f64) -> f64 {
    k / (1.0 + k)
}

/// One fixed-horizon trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `s_0 ..= s_T`
    pub states: Vec<State>,
    /// `a_0 .. a_{T-1}`
    pub actions: Vec<Action>,
    /// `r_t = reward(s_{t+1}, desired_goal)`
    pub rewards: Vec<f32>,
    /// `phi(s_0) ..= phi(s_T)`
    pub achieved_goals: Vec<Goal>,
    pub desired_goal: Goal,
}

impl Episode {
    /// Runs one episode of `env.horizon()` steps, taking actions from `policy`.
    pub fn collect<F>(env: &Env, start: State, desired_goal: Goal, mut policy: F) -> Result<Self>
    where
        F: FnMut(&[f32], &[f32]) -> Result<Action>,
    {
        let horizon = env.horizon();
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut achieved_goals = Vec::with_capacity(horizon + 1);
        achieved_goals.push(env.achieved_goal(&start));
        states.push(start);
        for _ in 0..horizon {
            let s = states.last().unwrap();
            let a = policy(s, &desired_goal)?;
            let next = env.step(s, &a)?;
            let ag = env.achieved_goal(&next);
            rewards.push(env.reward_from_achieved(&ag, &desired_goal)?);
            achieved_goals.push(ag);
            actions.push(a.iter().map(|v| v.clamp(-1.0, 1.0)).collect());
            states.push(next);
        }
        Ok(Self { states, actions, rewards, achieved_goals, desired_goal })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Checks array lengths, dimensions, cached achieved goals and rewards
    /// against `env`.
    pub fn validate(&self, env: &Env) -> Result<()> {
        let t = env.horizon();
        if self.states.len() != t + 1
            || self.actions.len() != t
            || self.rewards.len() != t
            || self.achieved_goals.len() != t + 1
        {
            return Err(Error::config(format!(
                "malformed episode: {} states, {} actions, {} rewards, {} achieved goals for horizon {t}",
                self.states.len(),
                self.actions.len(),
                self.rewards.len(),
                self.achieved_goals.len()
            )));
        }
        if self.desired_goal.len() != env.goal_dim() {
            return Err(Error::config("malformed episode: desired goal dimension"));
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.len() != env.state_dim() {
                return Err(Error::config(format!("malformed episode: state {i} dimension")));
            }
            if env.achieved_goal(s) != self.achieved_goals[i] {
                return Err(Error::config(format!("malformed episode: achieved goal {i} is stale")));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.len() != env.action_dim() {
                return Err(Error::config(format!("malformed episode: action {i} dimension")));
            }
        }
        for (i, r) in self.rewards.iter().enumerate() {
            let expected = env.reward_from_achieved(&self.achieved_goals[i + 1], &self.desired_goal)?;
            if *r != expected {
                return Err(Error::config(format!("malformed episode: reward {i} is {r}, expected {expected}")));
            }
        }
        Ok(())
    }

    pub fn final_success(&self) -> bool {
        self.rewards.last().is_some_and(|&r| r == 0.0)
    }
}

/// `n'` consecutive transitions of one episode starting at `t`.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    episode: &'a Episode,
    start: usize,
    len: usize,
}

impl<'a> Window<'a> {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn episode(&self) -> &'a Episode {
        self.episode
    }

    /// `s_{t+i}` for `i` in `0..=len`.
    pub fn state(&self, i: usize) -> &'a [f32] {
        assert!(i <= self.len);
        &self.episode.states[self.start + i]
    }

    /// `a_{t+i}` for `i` in `0..len`.
    pub fn action(&self, i: usize) -> &'a [f32] {
        assert!(i < self.len);
        &self.episode.actions[self.start + i]
    }

    /// `phi(s_{t+i})` for `i` in `0..=len`.
    pub fn achieved(&self, i: usize) -> &'a [f32] {
        assert!(i <= self.len);
        &self.episode.achieved_goals[self.start + i]
    }
}

/// `min(n, T - t)` consecutive transitions starting at `t`.
pub fn select_consecutive(episode: &Episode, t: usize, n: usize) -> Result<Window<'_>> {
    let horizon = episode.horizon();
    if t >= horizon {
        return Err(Error::config(format!("transition index {t} outside horizon {horizon}")));
    }
    if n == 0 {
        return Err(Error::config("window length n must be at least 1"));
    }
    Ok(Window { episode, start: t, len: n.min(horizon - t) })
}

/// Future-strategy relabeling: with probability `relabel_prob` the goal is
/// `phi(s_j)` for `j` uniform on `[t, T]`, otherwise the desired goal.
pub fn relabel_goal(episode: &Episode, t: usize, relabel_prob: f64, rng: &mut Prng) -> (Goal, bool) {
    if rng.uniform() < relabel_prob {
        let j = t + rng.below(episode.horizon() - t + 1);
        (episode.achieved_goals[j].clone(), true)
    } else {
        (episode.desired_goal.clone(), false)
    }
}

/// A sampled transition with its relabeled goal and n-step context.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTransition {
    pub episode: usize,
    pub t: usize,
    pub goal: Goal,
    pub relabeled: bool,
    /// Effective window length `n' = min(n, T - t)`.
    pub window_len: usize,
    /// `r'_{t+i} = reward(s_{t+i+1}, goal)` for `i` in `0..n'`.
    pub rewards: Vec<f32>,
}

/// FIFO buffer of whole episodes, bounded in transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    horizon: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity_transitions: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 || capacity_transitions < horizon {
            return Err(Error::config(format!(
                "buffer capacity {capacity_transitions} cannot hold one episode of {horizon} transitions"
            )));
        }
        Ok(Self { episodes: VecDeque::new(), capacity: capacity_transitions, horizon, inserted: 0 })
    }

    pub fn capacity_transitions(&self) -> usize {
        self.capacity
    }

    pub fn capacity_episodes(&self) -> usize {
        self.capacity / self.horizon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.len() * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Total episodes ever stored, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn episode(&self, index: usize) -> &Episode {
        &self.episodes[index]
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn store_episode(&mut self, episode: Episode, env: &Env) -> Result<()> {
        if env.horizon() != self.horizon {
            return Err(Error::config("environment horizon differs from buffer horizon"));
        }
        episode.validate(env)?;
        if self.episodes.len() == self.capacity_episodes() {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.inserted += 1;
        Ok(())
    }

    pub fn window(&self, sample: &SampledTransition) -> Window<'_> {
        Window { episode: &self.episodes[sample.episode], start: sample.t, len: sample.window_len }
    }

    /// Uniform transition sampling with per-sample relabeling and reward
    /// recomputation over the selected window.
    pub fn sample_batch(
        &self,
        env: &Env,
        batch_size: usize,
        n: usize,
        relabel_prob: f64,
        rng: &mut Prng,
    ) -> Result<Vec<SampledTransition>> {
        if self.episodes.is_empty() {
            return Err(Error::training("cannot sample from an empty replay buffer"));
        }
        if n == 0 {
            return Err(Error::config("window length n must be at least 1"));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            // every episode has the same length, so this is uniform over transitions
            let e = rng.below(self.episodes.len());
            let t = rng.below(self.horizon);
            let episode = &self.episodes[e];
            let (goal, relabeled) = relabel_goal(episode, t, relabel_prob, rng);
            let window_len = n.min(self.horizon - t);
            let rewards = (0..window_len)
                .map(|i| env.reward_unchecked(&episode.achieved_goals[t + i + 1], &goal))
                .collect();
            batch.push(SampledTransition { episode: e, t, goal, relabeled, window_len, rewards });
        }
        Ok(batch)
    }
}
