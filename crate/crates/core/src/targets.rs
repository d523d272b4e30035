//! Bootstrapped target values for the critic.
//!
//! All bootstraps read the *target* critic at the *target* actor's action,
//! clipped to `[-1/(1-gamma), 0]`, except the model rollout actions of the
//! model-based target which come from the current actor.

use std::fmt;
use std::str::FromStr;

use crate::diagnostics::per_sample_bias;
use crate::envkit::{Action, Env, Goal, State};
use crate::error::{Error, Result};
use crate::replay::{SampledTransition, Window};

/// Goal-conditioned deterministic policy `pi(s, g)`.
pub trait GoalPolicy {
    fn action(&self, state: &[f32], goal: &[f32]) -> Action;
}

/// Goal-conditioned action value `Q(s, a, g)`.
pub trait GoalCritic {
    fn q(&self, state: &[f32], action: &[f32], goal: &[f32]) -> f64;
}

impl<F: Fn(&[f32], &[f32]) -> Action> GoalPolicy for F {
    fn action(&self, state: &[f32], goal: &[f32]) -> Action {
        self(state, goal)
    }
}

impl<F: Fn(&[f32], &[f32], &[f32]) -> f64> GoalCritic for F {
    fn q(&self, state: &[f32], action: &[f32], goal: &[f32]) -> f64 {
        self(state, action, goal)
    }
}

/// Next-state predictor used for model rollouts.
pub trait Dynamics {
    fn predict_next(&self, state: &[f32], action: &[f32]) -> Result<State>;
}

/// The true environment is a perfect model.
impl Dynamics for Env {
    fn predict_next(&self, state: &[f32], action: &[f32]) -> Result<State> {
        self.step(state, action)
    }
}

/// Indexed access to a run of consecutive transitions.
pub trait StepSeq {
    /// Number of transitions.
    fn len(&self) -> usize;
    /// `s_i` for `i` in `0..=len`.
    fn state(&self, i: usize) -> &[f32];
    /// `a_i` for `i` in `0..len`.
    fn action(&self, i: usize) -> &[f32];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl StepSeq for Window<'_> {
    fn len(&self) -> usize {
        Window::len(self)
    }
    fn state(&self, i: usize) -> &[f32] {
        Window::state(self, i)
    }
    fn action(&self, i: usize) -> &[f32] {
        Window::action(self, i)
    }
}

/// Closed interval applied to every critic value used as a bootstrap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueClip {
    pub lo: f64,
    pub hi: f64,
}

impl ValueClip {
    /// `[-1/(1-gamma), 0]`: the range of returns under rewards in `[-1, 0]`.
    pub fn for_gamma(gamma: f64) -> Self {
        Self { lo: -1.0 / (1.0 - gamma), hi: 0.0 }
    }

    pub fn apply(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Bootstrap networks: a critic and the policy whose value it estimates.
#[derive(Clone, Copy)]
pub struct TargetNets<'a> {
    pub critic: &'a dyn GoalCritic,
    pub policy: &'a dyn GoalPolicy,
    pub clip: Option<ValueClip>,
}

impl<'a> TargetNets<'a> {
    pub fn new(critic: &'a dyn GoalCritic, policy: &'a dyn GoalPolicy, clip: Option<ValueClip>) -> Self {
        Self { critic, policy, clip }
    }

    /// Clipped `Q(s, a, g)`.
    pub fn q(&self, state: &[f32], action: &[f32], goal: &[f32]) -> f64 {
        let v = self.critic.q(state, action, goal);
        self.clip.map_or(v, |c| c.apply(v))
    }

    /// Clipped `Q(s, pi(s, g), g)`.
    pub fn value(&self, state: &[f32], goal: &[f32]) -> f64 {
        let a = self.policy.action(state, goal);
        self.q(state, &a, goal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetKind {
    OneStep,
    VanillaNstep,
    LambdaNstep,
    ModelBased,
    BiasCorrected,
    IsDiagnostic,
}

impl TargetKind {
    pub const ALL: [TargetKind; 6] = [
        TargetKind::OneStep,
        TargetKind::VanillaNstep,
        TargetKind::LambdaNstep,
        TargetKind::ModelBased,
        TargetKind::BiasCorrected,
        TargetKind::IsDiagnostic,
    ];

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::OneStep => "her",
            TargetKind::VanillaNstep => "mher",
            TargetKind::LambdaNstep => "mher-lambda",
            TargetKind::ModelBased => "mmher",
            TargetKind::BiasCorrected => "bias-corrected",
            TargetKind::IsDiagnostic => "is-diagnostic",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown target `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub n: usize,
    /// Only read by [`TargetKind::LambdaNstep`].
    pub lambda: f64,
    /// Only read by [`TargetKind::ModelBased`].
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { kind: TargetKind::OneStep, n: 1, lambda: 0.7, alpha: 0.4, gamma: 0.98 }
    }
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Window length the replay sampler should select for this target.
    pub fn window_n(&self) -> usize {
        match self.kind {
            TargetKind::OneStep | TargetKind::ModelBased => 1,
            _ => self.n,
        }
    }
}

/// `r'_t + gamma * V(s_{t+1})`.
pub fn one_step_target(reward: f64, next_state: &[f32], goal: &[f32], nets: &TargetNets, gamma: f64) -> f64 {
    reward + gamma * nets.value(next_state, goal)
}

/// Relabeled n-step target over the whole window:
/// `sum_{i<n} gamma^i r'_{t+i} + gamma^n V(s_{t+n})` with `n = window.len()`.
pub fn nstep_target(window: &impl StepSeq, rewards: &[f32], goal: &[f32], nets: &TargetNets, gamma: f64) -> f64 {
    let n = window.len();
    debug_assert_eq!(rewards.len(), n);
    let mut ret = 0.0;
    let mut disc = 1.0;
    for r in &rewards[..n] {
        ret += disc * *r as f64;
        disc *= gamma;
    }
    ret + disc * nets.value(window.state(n), goal)
}

/// `y^(1) ..= y^(n)` for every prefix of the window, in one pass.
pub fn nstep_targets_all(
    window: &impl StepSeq,
    rewards: &[f32],
    goal: &[f32],
    nets: &TargetNets,
    gamma: f64,
) -> Vec<f64> {
    let n = window.len();
    let mut out = Vec::with_capacity(n);
    let mut ret = 0.0;
    let mut disc = 1.0;
    for (i, r) in rewards[..n].iter().enumerate() {
        ret += disc * *r as f64;
        disc *= gamma;
        out.push(ret + disc * nets.value(window.state(i + 1), goal));
    }
    out
}

/// `sum_i lambda^i y_i / sum_i lambda^i` with `i` counted from 1.
///
/// A single target, or `lambda == 0`, returns `y_1` unchanged.
pub fn lambda_mix(ys: &[f64], lambda: f64) -> f64 {
    assert!(!ys.is_empty(), "lambda_mix of no targets");
    if ys.len() == 1 || lambda == 0.0 {
        return ys[0];
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut w = 1.0;
    for y in ys {
        w *= lambda;
        num += w * y;
        den += w;
    }
    num / den
}

/// Exponentially weighted mix of the 1..n step targets.
pub fn lambda_target(
    window: &impl StepSeq,
    rewards: &[f32],
    goal: &[f32],
    nets: &TargetNets,
    gamma: f64,
    lambda: f64,
) -> f64 {
    if window.len() == 1 || lambda == 0.0 {
        return one_step_target(rewards[0] as f64, window.state(1), goal, nets, gamma);
    }
    lambda_mix(&nstep_targets_all(window, rewards, goal, nets, gamma), lambda)
}

/// Transitions imagined by the dynamics model from `s_{t+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWindow {
    /// `s'_{t+1} ..= s'_{t+n}`, with `s'_{t+1} = s_{t+1}`.
    pub states: Vec<State>,
    /// `a'_{t+1} .. a'_{t+n-1}`
    pub actions: Vec<Action>,
    /// `r'_{t+1} .. r'_{t+n-1}`
    pub rewards: Vec<f32>,
}

impl SyntheticWindow {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// The real first transition `(s_t, a_t)` followed by the imagined ones.
    pub fn with_real_first(&self, state: &[f32], action: &[f32]) -> ComposedWindow {
        let mut states = Vec::with_capacity(self.states.len() + 1);
        states.push(state.to_vec());
        states.extend(self.states.iter().cloned());
        let mut actions = Vec::with_capacity(self.actions.len() + 1);
        actions.push(action.to_vec());
        actions.extend(self.actions.iter().cloned());
        ComposedWindow { states, actions }
    }
}

/// Owned consecutive transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedWindow {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
}

impl StepSeq for ComposedWindow {
    fn len(&self) -> usize {
        self.actions.len()
    }
    fn state(&self, i: usize) -> &[f32] {
        &self.states[i]
    }
    fn action(&self, i: usize) -> &[f32] {
        &self.actions[i]
    }
}

/// Rolls `n - 1` steps from `next_state` with `policy` and `model`,
/// rewarding each imagined next state against `goal`.
pub fn mmher_rollout(
    next_state: &[f32],
    goal: &[f32],
    policy: &dyn GoalPolicy,
    model: &dyn Dynamics,
    env: &Env,
    n: usize,
) -> Result<SyntheticWindow> {
    let steps = n.saturating_sub(1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    states.push(next_state.to_vec());
    for _ in 0..steps {
        let s = states.last().unwrap();
        let a = policy.action(s, goal);
        let s_next = model.predict_next(s, &a)?;
        if let Some(i) = s_next.iter().position(|v| !v.is_finite()) {
            return Err(Error::training(format!("model predicted a non-finite state coordinate {i}")));
        }
        rewards.push(env.sparse_reward(&s_next, goal)?);
        actions.push(a);
        states.push(s_next);
    }
    Ok(SyntheticWindow { states, actions, rewards })
}

/// `(alpha * y_n + y_1) / (alpha + 1)`.
pub fn mmher_mix(y_n: f64, one_step: f64, alpha: f64) -> f64 {
    (alpha * y_n + one_step) / (alpha + 1.0)
}

/// Model-based expansion mixed with the real one-step target.
pub fn mmher_target(
    reward: f64,
    next_state: &[f32],
    synthetic: &SyntheticWindow,
    goal: &[f32],
    nets: &TargetNets,
    gamma: f64,
    alpha: f64,
) -> f64 {
    let one_step = one_step_target(reward, next_state, goal, nets, gamma);
    if alpha == 0.0 {
        return one_step;
    }
    let mut ret = reward;
    let mut disc = gamma;
    for r in &synthetic.rewards {
        ret += disc * *r as f64;
        disc *= gamma;
    }
    let last = synthetic.states.last().expect("synthetic window holds s_{t+1}");
    let y_n = ret + disc * nets.value(last, goal);
    mmher_mix(y_n, one_step, alpha)
}

/// n-step target plus the estimated off-policy bias of the window, which
/// recovers `Q(s_t, a_t)` exactly when the critic is the true `Q^pi`.
pub fn bias_corrected_target(
    window: &impl StepSeq,
    rewards: &[f32],
    goal: &[f32],
    nets: &TargetNets,
    gamma: f64,
) -> f64 {
    nstep_target(window, rewards, goal, nets, gamma) + per_sample_bias(window, goal, nets, gamma)
}

/// Importance-sampled n-step target for deterministic policies.
///
/// The ratio at step `k` is 1 when `pi(s_{t+k}, g)` equals the stored
/// action exactly and 0 otherwise; term `i` is weighted by the product of
/// the ratios at `k < i`. Returns the value and the number of terms with
/// non-zero weight.
pub fn is_diagnostic_target(
    window: &impl StepSeq,
    rewards: &[f32],
    goal: &[f32],
    nets: &TargetNets,
    gamma: f64,
) -> (f64, usize) {
    let n = window.len();
    let mut value = 0.0;
    let mut disc = 1.0;
    let mut surviving = 0;
    for i in 0..n {
        if i > 0 {
            let k = i - 1;
            if nets.policy.action(window.state(k), goal) != window.action(k) {
                break;
            }
        }
        value += disc * (rewards[i] as f64 + gamma * nets.value(window.state(i + 1), goal));
        surviving += 1;
        disc *= gamma;
    }
    (value, surviving)
}

/// Everything a target needs beyond the sampled transition.
#[derive(Clone, Copy)]
pub struct TargetContext<'a> {
    pub env: &'a Env,
    pub nets: TargetNets<'a>,
    /// Acts in model rollouts.
    pub rollout_policy: &'a dyn GoalPolicy,
    pub model: Option<&'a dyn Dynamics>,
}

/// Target for one sampled transition under `config`, before final clipping.
pub fn compute_target(
    config: &TargetConfig,
    ctx: &TargetContext,
    window: &Window,
    sample: &SampledTransition,
) -> Result<f64> {
    let gamma = config.gamma;
    let goal: &Goal = &sample.goal;
    let nets = &ctx.nets;
    let rewards = &sample.rewards;
    Ok(match config.kind {
        TargetKind::OneStep => one_step_target(rewards[0] as f64, window.state(1), goal, nets, gamma),
        TargetKind::VanillaNstep => nstep_target(window, rewards, goal, nets, gamma),
        TargetKind::LambdaNstep => lambda_target(window, rewards, goal, nets, gamma, config.lambda),
        TargetKind::BiasCorrected => bias_corrected_target(window, rewards, goal, nets, gamma),
        TargetKind::IsDiagnostic => is_diagnostic_target(window, rewards, goal, nets, gamma).0,
        TargetKind::ModelBased => {
            let model = ctx.model.ok_or_else(|| Error::config("model-based target without a dynamics model"))?;
            let synthetic = mmher_rollout(window.state(1), goal, ctx.rollout_policy, model, ctx.env, config.n)?;
            mmher_target(rewards[0] as f64, window.state(1), &synthetic, goal, nets, gamma, config.alpha)
        }
    })
}
