//! Off-policy n-step bias instrumentation.
//!
//! For a window of stored transitions `(s_{t+i}, a_{t+i})` and goal `g`,
//! the per-sample bias is
//! `sum_{i=1}^{n-1} gamma^i [Q(s_{t+i}, pi(s_{t+i}, g), g) - Q(s_{t+i}, a_{t+i}, g)]`;
//! adding it to the n-step target recovers an unbiased estimate of
//! `Q(s_t, a_t, g)`. The bound reported next to the average bias is
//! `gamma (n-1) [|mean r| + gamma L mean ||s_t - s_{t+1}||]` with `L` the
//! empirical Lipschitz constant of `V(s) = Q(s, pi(s, g), g)`.

use crate::envkit::{value_iteration, Env, TabularMdp};
use crate::error::{Error, Result};
use crate::numkit::Prng;
use crate::replay::{ReplayBuffer, SampledTransition};
use crate::targets::{nstep_target, ComposedWindow, StepSeq, TargetNets};

/// Default number of windows per diagnostic pass.
pub const DEFAULT_SAMPLE_SIZE: usize = 1024;

/// Off-policy bias of one window under `nets`.
pub fn per_sample_bias(window: &impl StepSeq, goal: &[f32], nets: &TargetNets, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut disc = 1.0;
    for i in 1..window.len() {
        disc *= gamma;
        let s = window.state(i);
        total += disc * (nets.value(s, goal) - nets.q(s, window.action(i), goal));
    }
    total
}

/// Mean of already computed per-sample biases.
pub fn avg_bias(per_sample: &[f64]) -> Result<f64> {
    if per_sample.is_empty() {
        return Err(Error::config("average bias over an empty sample"));
    }
    Ok(per_sample.iter().sum::<f64>() / per_sample.len() as f64)
}

/// `|mean reward|` over a sample.
pub fn abs_avg_reward(rewards: &[f32]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::config("absolute average reward over an empty sample"));
    }
    let mean = rewards.iter().map(|&r| r as f64).sum::<f64>() / rewards.len() as f64;
    Ok(mean.abs())
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Consecutive states sharing one evaluation goal.
#[derive(Clone, Copy, Debug)]
pub struct StatePair<'a> {
    pub from: &'a [f32],
    pub to: &'a [f32],
    pub goal: &'a [f32],
}

/// `max |V(s) - V(s')| / ||s - s'||` over pairs with distinct states, or
/// `None` when every pair has zero distance.
pub fn lipschitz_estimate<V>(value: V, pairs: &[StatePair]) -> Option<f64>
where
    V: Fn(&[f32], &[f32]) -> f64,
{
    let mut best: Option<f64> = None;
    for p in pairs {
        let d = euclidean(p.from, p.to);
        if d == 0.0 {
            continue;
        }
        let ratio = (value(p.from, p.goal) - value(p.to, p.goal)).abs() / d;
        best = Some(best.map_or(ratio, |b| b.max(ratio)));
    }
    best
}

/// `gamma (n-1) [r_abs + gamma L mean_step_norm]`.
pub fn prop2_bound(gamma: f64, n: usize, abs_avg_reward: f64, lipschitz: f64, mean_step_norm: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    gamma * (n - 1) as f64 * (abs_avg_reward + gamma * lipschitz * mean_step_norm)
}

/// Result of one diagnostic pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub epoch: usize,
    pub n: usize,
    pub avg_bias: f64,
    pub abs_avg_reward: f64,
    pub mean_step_norm: f64,
    /// `None` when every sampled state pair had zero distance.
    pub lipschitz: Option<f64>,
    /// `None` exactly when `lipschitz` is unavailable and `n > 1`.
    pub prop2_bound: Option<f64>,
    pub sample_count: usize,
}

/// Samples `sample_size` relabeled windows of length `n` and measures them
/// with [`bias_report_on`].
#[allow(clippy::too_many_arguments)]
pub fn bias_report(
    buffer: &ReplayBuffer,
    env: &Env,
    nets: &TargetNets,
    gamma: f64,
    n: usize,
    sample_size: usize,
    relabel_prob: f64,
    epoch: usize,
    rng: &mut Prng,
) -> Result<BiasReport> {
    if sample_size == 0 {
        return Err(Error::config("diagnostic sample size must be positive"));
    }
    let samples = buffer.sample_batch(env, sample_size, n, relabel_prob, rng)?;
    bias_report_on(buffer, &samples, nets, gamma, n, epoch)
}

/// Bias, reward magnitude, Lipschitz constant and bound, all measured on
/// the same windows. Every transition of every window contributes a
/// reward, a step norm and a Lipschitz pair.
pub fn bias_report_on(
    buffer: &ReplayBuffer,
    samples: &[SampledTransition],
    nets: &TargetNets,
    gamma: f64,
    n: usize,
    epoch: usize,
) -> Result<BiasReport> {
    let mut biases = Vec::with_capacity(samples.len());
    let mut rewards = Vec::new();
    let mut pairs = Vec::new();
    let mut step_norm_sum = 0.0;
    for s in samples {
        let w = buffer.window(s);
        biases.push(per_sample_bias(&w, &s.goal, nets, gamma));
        rewards.extend_from_slice(&s.rewards);
        for i in 0..w.len() {
            let p = StatePair { from: w.state(i), to: w.state(i + 1), goal: &s.goal };
            step_norm_sum += euclidean(p.from, p.to);
            pairs.push(p);
        }
    }
    let avg = avg_bias(&biases)?;
    let r_abs = abs_avg_reward(&rewards)?;
    let mean_step_norm = step_norm_sum / pairs.len() as f64;
    let lipschitz = lipschitz_estimate(|st, g| nets.value(st, g), &pairs);
    let bound = match lipschitz {
        Some(l) => Some(prop2_bound(gamma, n, r_abs, l, mean_step_norm)),
        None if n <= 1 => Some(0.0),
        None => None,
    };
    Ok(BiasReport {
        epoch,
        n,
        avg_bias: avg,
        abs_avg_reward: r_abs,
        mean_step_norm,
        lipschitz,
        prop2_bound: bound,
        sample_count: samples.len(),
    })
}

/// State/action index sequence through a tabular MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularTrajectory {
    /// One longer than `actions`.
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl TabularTrajectory {
    /// Follows `behavior` from `(start, first_action)` for `steps`
    /// transitions, drawing successors from the MDP.
    pub fn sample(
        mdp: &TabularMdp,
        start: usize,
        first_action: usize,
        behavior: &[usize],
        steps: usize,
        rng: &mut Prng,
    ) -> Self {
        let mut states = vec![start];
        let mut actions = Vec::with_capacity(steps);
        let mut a = first_action;
        for _ in 0..steps {
            let s = *states.last().unwrap();
            actions.push(a);
            let u = rng.uniform();
            let row = mdp.row(s, a);
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (k, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = k;
                    break;
                }
            }
            states.push(next);
            a = behavior[next];
        }
        Self { states, actions }
    }

    fn window(&self, t: usize, n: usize) -> (ComposedWindow, Vec<f32>, usize) {
        let len = n.min(self.actions.len() - t);
        let states = self.states[t..=t + len].iter().map(|&s| vec![s as f32]).collect();
        let actions = self.actions[t..t + len].iter().map(|&a| vec![a as f32]).collect();
        (ComposedWindow { states, actions }, Vec::new(), len)
    }
}

fn tabular_nets_eval(
    mdp: &TabularMdp,
    q: &crate::envkit::QTable,
    policy: &[usize],
    traj: &TabularTrajectory,
    t: usize,
    n: usize,
) -> f64 {
    let critic = |s: &[f32], a: &[f32], _: &[f32]| q.get(s[0] as usize, a[0] as usize);
    let pi = |s: &[f32], _: &[f32]| vec![policy[s[0] as usize] as f32];
    let nets = TargetNets::new(&critic, &pi, None);
    let (w, _, len) = traj.window(t, n);
    let rewards: Vec<f32> = (0..len).map(|i| mdp.reward(traj.states[t + i], traj.actions[t + i]) as f32).collect();
    nstep_target(&w, &rewards, &[], &nets, mdp.gamma()) + per_sample_bias(&w, &[], &nets, mdp.gamma())
}

/// Max over every window start of
/// `|nstep_target + per_sample_bias - Q^pi(s_t, a_t)|` with the exact
/// `Q^pi` from value iteration (solved to `tol`).
///
/// Rewards must be representable in `f32` exactly (they are `0` or `-1`
/// for sparse tasks) since windows carry rewards in single precision.
pub fn appendix_a_check(
    mdp: &TabularMdp,
    trajectories: &[TabularTrajectory],
    policy: &[usize],
    n: usize,
    tol: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("n must be at least 1"));
    }
    let q = value_iteration(mdp, Some(policy), tol)?;
    let mut worst: f64 = 0.0;
    for traj in trajectories {
        if traj.states.len() != traj.actions.len() + 1 {
            return Err(Error::config("trajectory needs one more state than actions"));
        }
        for t in 0..traj.actions.len() {
            let est = tabular_nets_eval(mdp, &q, policy, traj, t, n);
            worst = worst.max((est - q.get(traj.states[t], traj.actions[t])).abs());
        }
    }
    Ok(worst)
}

/// Stochastic-MDP form: mean over `samples` behavior rollouts from
/// `(start, first_action)` of the corrected n-step estimate, minus the
/// exact `Q^pi(start, first_action)`, in absolute value.
#[allow(clippy::too_many_arguments)]
pub fn appendix_a_sampled_residual(
    mdp: &TabularMdp,
    policy: &[usize],
    behavior: &[usize],
    start: usize,
    first_action: usize,
    n: usize,
    samples: usize,
    tol: f64,
    rng: &mut Prng,
) -> Result<f64> {
    if samples == 0 || n == 0 {
        return Err(Error::config("need at least one sample and n >= 1"));
    }
    let q = value_iteration(mdp, Some(policy), tol)?;
    let mut sum = 0.0;
    for _ in 0..samples {
        let traj = TabularTrajectory::sample(mdp, start, first_action, behavior, n, rng);
        sum += tabular_nets_eval(mdp, &q, policy, &traj, 0, n);
    }
    Ok((sum / samples as f64 - q.get(start, first_action)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{Action, EnvConfig, EnvKind};

    fn seq(states: Vec<Vec<f32>>, actions: Vec<Vec<f32>>) -> ComposedWindow {
        ComposedWindow { states, actions }
    }

    #[test]
    fn single_step_window_has_no_bias() {
        let critic = |s: &[f32], a: &[f32], _: &[f32]| (s[0] - a[0]) as f64;
        let policy = |_: &[f32], _: &[f32]| -> Action { vec![1.0] };
        let nets = TargetNets::new(&critic, &policy, None);
        let w = seq(vec![vec![0.0], vec![1.0]], vec![vec![0.3]]);
        assert_eq!(per_sample_bias(&w, &[0.0], &nets, 0.9), 0.0);
    }

    #[test]
    fn on_policy_window_has_no_bias() {
        let critic = |s: &[f32], a: &[f32], _: &[f32]| -(s[0] as f64) * (a[0] as f64).abs();
        let policy = |s: &[f32], _: &[f32]| -> Action { vec![s[0] * 0.5] };
        let nets = TargetNets::new(&critic, &policy, None);
        let states: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32]).collect();
        let actions = states[..4].iter().map(|s| policy(s, &[])).collect();
        assert_eq!(per_sample_bias(&seq(states, actions), &[0.0], &nets, 0.98), 0.0);
    }

    #[test]
    fn scalar_bias_fixture() {
        // gaps Q(s,pi) - Q(s,a) of 0.2 at s1 and 0.4 at s2
        let critic = |s: &[f32], a: &[f32], _: &[f32]| if a[0] == 0.0 { 0.0 } else { -0.2 * s[0] as f64 };
        let policy = |_: &[f32], _: &[f32]| -> Action { vec![0.0] };
        let nets = TargetNets::new(&critic, &policy, None);
        let w = seq(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![vec![1.0]; 3]);
        assert!((per_sample_bias(&w, &[0.0], &nets, 0.5) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn averages_and_rewards() {
        assert!(avg_bias(&[]).is_err());
        assert_eq!(avg_bias(&[0.25]).unwrap(), 0.25);
        assert!(abs_avg_reward(&[]).is_err());
        assert_eq!(abs_avg_reward(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(abs_avg_reward(&[-1.0; 4]).unwrap(), 1.0);
        assert_eq!(abs_avg_reward(&[0.0, -1.0, 0.0, -1.0]).unwrap(), 0.5);
    }

    #[test]
    fn avg_bias_over_many_windows() {
        let mut rng = Prng::new(3);
        let vals: Vec<f64> = (0..100).map(|_| rng.uniform() * 2.0 - 0.5).collect();
        let mut acc = 0.0;
        for v in &vals {
            acc += v;
        }
        assert!((avg_bias(&vals).unwrap() - acc / 100.0).abs() <= 1e-9);
    }

    #[test]
    fn lipschitz_cases() {
        let states: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32, 0.0]).collect();
        let pairs: Vec<StatePair> =
            states.windows(2).map(|w| StatePair { from: &w[0], to: &w[1], goal: &[] }).collect();
        assert_eq!(lipschitz_estimate(|_, _| -3.0, &pairs), Some(0.0));
        assert_eq!(lipschitz_estimate(|s, _| 2.0 * s[0] as f64, &pairs), Some(2.0));
        let still = [StatePair { from: &states[1], to: &states[1], goal: &[] }];
        assert_eq!(lipschitz_estimate(|s, _| s[0] as f64, &still), None);
        // adding pairs never lowers the estimate
        let v = |s: &[f32], _: &[f32]| (s[0] as f64).powi(2);
        let mut prev = 0.0;
        for k in 1..=pairs.len() {
            let l = lipschitz_estimate(v, &pairs[..k]).unwrap();
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn bound_cases() {
        assert_eq!(prop2_bound(0.98, 1, 0.9, 1.0, 0.1), 0.0);
        assert_eq!(prop2_bound(0.0, 3, 0.9, 1.0, 0.1), 0.0);
        assert!((prop2_bound(0.98, 3, 0.9, 1.0, 0.1) - 1.95608).abs() < 1e-12);
    }

    fn chain_setup() -> (TabularMdp, Vec<usize>) {
        let env = Env::new(EnvConfig { chain_len: 3, ..EnvConfig::defaults(EnvKind::TabularChain) }).unwrap();
        // target policy heads right
        (env.chain_mdp(2, 0.9).unwrap(), vec![2, 2, 1])
    }

    #[test]
    fn corrected_nstep_identity_on_deterministic_chain() {
        let (mdp, policy) = chain_setup();
        let mut rng = Prng::new(12);
        let behavior = [0usize, 1, 0];
        let trajs: Vec<TabularTrajectory> =
            (0..3).map(|s| TabularTrajectory::sample(&mdp, s, rng.below(3), &behavior, 8, &mut rng)).collect();
        for n in 1..=5 {
            let r = appendix_a_check(&mdp, &trajs, &policy, n, 1e-14).unwrap();
            assert!(r <= 1e-9, "n={n} residual {r}");
        }
        // on-policy windows
        let on: Vec<TabularTrajectory> =
            (0..3).map(|s| TabularTrajectory::sample(&mdp, s, policy[s], &policy, 6, &mut rng)).collect();
        assert!(appendix_a_check(&mdp, &on, &policy, 3, 1e-14).unwrap() <= 1e-9);
    }

    #[test]
    fn uncorrected_nstep_is_biased_off_policy() {
        // sanity: without the correction the residual is large
        let (mdp, policy) = chain_setup();
        let q = value_iteration(&mdp, Some(&policy), 1e-14).unwrap();
        let critic = |s: &[f32], a: &[f32], _: &[f32]| q.get(s[0] as usize, a[0] as usize);
        let pi = |s: &[f32], _: &[f32]| vec![policy[s[0] as usize] as f32];
        let nets = TargetNets::new(&critic, &pi, None);
        // stay, stay, stay from cell 0
        let w = seq(vec![vec![0.0]; 4], vec![vec![1.0]; 3]);
        let y = nstep_target(&w, &[-1.0, -1.0, -1.0], &[], &nets, 0.9);
        assert!((y - q.get(0, 1)).abs() > 0.1);
    }

    #[test]
    fn sampled_residual_shrinks_on_stochastic_mdp() {
        // two states, two actions, noisy successors
        let t = vec![0.7, 0.3, 0.2, 0.8, 0.4, 0.6, 0.9, 0.1];
        let r = vec![-1.0, -1.0, 0.0, -1.0];
        let mdp = TabularMdp::new(2, 2, t, r, 0.9).unwrap();
        let policy = [1usize, 0];
        let behavior = [0usize, 1];
        let mut small = 0.0;
        let mut large = 0.0;
        for seed in 0..10 {
            let mut rng = Prng::new(seed);
            small += appendix_a_sampled_residual(&mdp, &policy, &behavior, 0, 0, 3, 100, 1e-13, &mut rng).unwrap();
            large += appendix_a_sampled_residual(&mdp, &policy, &behavior, 0, 0, 3, 10_000, 1e-13, &mut rng).unwrap();
        }
        assert!(large < small, "{large} vs {small}");
        assert!(large / 10.0 < 0.05);
    }
}
