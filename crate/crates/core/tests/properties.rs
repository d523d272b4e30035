mod common;

use common::{prefix, reach, window, Fixture};
use mher::diagnostics::{appendix_a_check, per_sample_bias, TabularTrajectory};
use mher::envkit::{Env, EnvConfig, EnvKind, TabularMdp};
use mher::numkit::{AdamState, Prng};
use mher::replay::{relabel_goal, Episode, ReplayBuffer};
use mher::targets::{
    bias_corrected_target, is_diagnostic_target, lambda_target, mmher_rollout, mmher_target, nstep_target,
    nstep_targets_all, one_step_target, ComposedWindow, Dynamics, StepSeq, TargetNets, ValueClip,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reduction_lattice_is_exact(seed in any::<u64>(), gamma in 0.0f64..0.999, lambda in 0.0f64..1.0,
                                  clip in any::<bool>()) {
        let env = reach();
        let f = Fixture::new(seed);
        let vc = clip.then(|| ValueClip::for_gamma(gamma));
        let nets = TargetNets::new(&f, &f, vc);
        let (w, r, g) = window(&env, seed ^ 0x5eed, 1);
        let one = one_step_target(r[0] as f64, w.state(1), &g, &nets, gamma);
        prop_assert_eq!(nstep_target(&w, &r, &g, &nets, gamma).to_bits(), one.to_bits());
        prop_assert_eq!(lambda_target(&w, &r, &g, &nets, gamma, lambda).to_bits(), one.to_bits());
        let syn = mmher_rollout(w.state(1), &g, &f, &env, &env, 3).unwrap();
        prop_assert_eq!(mmher_target(r[0] as f64, w.state(1), &syn, &g, &nets, gamma, 0.0).to_bits(), one.to_bits());
    }

    #[test]
    fn lambda_target_is_a_convex_mix(seed in any::<u64>(), n in 1usize..6, gamma in 0.0f64..0.999,
                                     lambda in 0.0f64..=1.0) {
        let env = reach();
        let f = Fixture::new(seed);
        let nets = TargetNets::new(&f, &f, Some(ValueClip::for_gamma(gamma)));
        let (w, r, g) = window(&env, seed.wrapping_add(1), n);
        let ys = nstep_targets_all(&w, &r, &g, &nets, gamma);
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y = lambda_target(&w, &r, &g, &nets, gamma, lambda);
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        prop_assert!(y >= lo - tol && y <= hi + tol, "{} outside [{}, {}]", y, lo, hi);
        for (i, yi) in ys.iter().enumerate() {
            prop_assert_eq!(yi.to_bits(), nstep_target(&prefix(&w, i + 1), &r[..=i], &g, &nets, gamma).to_bits());
        }
    }

    #[test]
    fn mmher_target_lies_between_its_operands(seed in any::<u64>(), n in 1usize..6, gamma in 0.0f64..0.999,
                                             alpha in 0.0f64..4.0) {
        let env = reach();
        let f = Fixture::new(seed);
        let nets = TargetNets::new(&f, &f, Some(ValueClip::for_gamma(gamma)));
        let (w, r, g) = window(&env, seed.wrapping_add(2), 1);
        let syn = mmher_rollout(w.state(1), &g, &f, &env, &env, n).unwrap();
        let one = one_step_target(r[0] as f64, w.state(1), &g, &nets, gamma);
        let full = syn.with_real_first(w.state(0), w.action(0));
        let mut rewards = r.clone();
        rewards.extend_from_slice(&syn.rewards);
        let yn = nstep_target(&full, &rewards, &g, &nets, gamma);
        let y = mmher_target(r[0] as f64, w.state(1), &syn, &g, &nets, gamma, alpha);
        let (lo, hi) = (one.min(yn), one.max(yn));
        let tol = 1e-9 * (1.0 + lo.abs());
        prop_assert!(y >= lo - tol && y <= hi + tol, "{} outside [{}, {}]", y, lo, hi);
    }

    #[test]
    fn clipped_targets_stay_in_range(seed in any::<u64>(), n in 1usize..6, gamma in 0.0f64..0.995,
                                     lambda in 0.0f64..=1.0, alpha in 0.0f64..2.0) {
        let env = reach();
        let f = Fixture::new(seed);
        let clip = ValueClip::for_gamma(gamma);
        let nets = TargetNets::new(&f, &f, Some(clip));
        let (w, r, g) = window(&env, seed.wrapping_add(3), n);
        let syn = mmher_rollout(w.state(1), &g, &f, &env, &env, n).unwrap();
        let raw = [
            one_step_target(r[0] as f64, w.state(1), &g, &nets, gamma),
            nstep_target(&w, &r, &g, &nets, gamma),
            lambda_target(&w, &r, &g, &nets, gamma, lambda),
            mmher_target(r[0] as f64, w.state(1), &syn, &g, &nets, gamma, alpha),
            is_diagnostic_target(&w, &r, &g, &nets, gamma).0,
        ];
        let eps = 1e-9 * clip.lo.abs();
        for y in raw {
            prop_assert!(y >= clip.lo - 1.0 - eps && y <= eps, "raw target {} outside range", y);
        }
        let corrected = bias_corrected_target(&w, &r, &g, &nets, gamma);
        for y in raw.into_iter().chain([corrected]) {
            let c = clip.apply(y);
            prop_assert!(c >= clip.lo && c <= clip.hi);
        }
    }

    #[test]
    fn importance_sampling_collapses_off_policy(seed in any::<u64>(), n in 1usize..6, gamma in 0.0f64..0.999) {
        let env = reach();
        let f = Fixture::new(seed);
        let nets = TargetNets::new(&f, &f, None);
        let (w, r, g) = window(&env, seed.wrapping_add(4), n);
        let (y, surviving) = is_diagnostic_target(&w, &r, &g, &nets, gamma);
        prop_assert_eq!(surviving, 1);
        prop_assert_eq!(y.to_bits(), one_step_target(r[0] as f64, w.state(1), &g, &nets, gamma).to_bits());
    }

    #[test]
    fn on_policy_windows_keep_every_term_and_have_no_bias(seed in any::<u64>(), n in 1usize..6,
                                                           gamma in 0.0f64..0.999) {
        let env = reach();
        let f = Fixture::new(seed);
        let nets = TargetNets::new(&f, &f, None);
        let (w0, _, g) = window(&env, seed.wrapping_add(5), 1);
        let syn = mmher_rollout(w0.state(0), &g, &f, &env, &env, n + 1).unwrap();
        let w = ComposedWindow { states: syn.states.clone(), actions: syn.actions.clone() };
        prop_assert_eq!(is_diagnostic_target(&w, &syn.rewards, &g, &nets, gamma).1, n);
        prop_assert_eq!(per_sample_bias(&w, &g, &nets, gamma), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn corrected_nstep_recovers_exact_q_on_deterministic_mdps(
        seed in any::<u64>(),
        n_states in 2usize..7,
        n_actions in 1usize..4,
        gamma in 0.1f64..0.95,
    ) {
        let mut rng = Prng::new(seed);
        let mut transitions = vec![0.0; n_states * n_actions * n_states];
        let mut rewards = vec![0.0; n_states * n_actions];
        let levels = [0.0, -0.25, -0.5, -1.0];
        for sa in 0..n_states * n_actions {
            transitions[sa * n_states + rng.below(n_states)] = 1.0;
            rewards[sa] = levels[rng.below(levels.len())];
        }
        let mdp = TabularMdp::new(n_states, n_actions, transitions, rewards, gamma).unwrap();
        let policy: Vec<usize> = (0..n_states).map(|_| rng.below(n_actions)).collect();
        let behavior: Vec<usize> = (0..n_states).map(|_| rng.below(n_actions)).collect();
        let trajs: Vec<TabularTrajectory> = (0..4)
            .map(|_| {
                let s = rng.below(n_states);
                let a = rng.below(n_actions);
                TabularTrajectory::sample(&mdp, s, a, &behavior, 8, &mut rng)
            })
            .collect();
        for n in 1..=5 {
            let residual = appendix_a_check(&mdp, &trajs, &policy, n, 1e-13).unwrap();
            prop_assert!(residual <= 1e-9, "n={} residual {}", n, residual);
        }
    }

    #[test]
    fn rewards_are_sparse_and_own_goals_succeed(seed in any::<u64>(), kind in 0usize..3, steps in 1usize..20) {
        let cfg = match kind {
            0 => EnvConfig::defaults(EnvKind::PointReach2d),
            1 => EnvConfig::defaults(EnvKind::PointPush2d),
            _ => EnvConfig::bitflip(6),
        };
        let env = Env::new(cfg).unwrap();
        let mut rng = Prng::new(seed);
        let (mut s, g) = env.reset(&mut rng);
        for _ in 0..steps {
            let a: Vec<f32> = (0..env.action_dim()).map(|_| rng.uniform_range(-1.5, 1.5) as f32).collect();
            let next = env.step(&s, &a).unwrap();
            prop_assert_eq!(&next, &env.step(&s, &a).unwrap());
            let r = env.sparse_reward(&next, &g).unwrap();
            prop_assert!(r == 0.0 || r == -1.0);
            prop_assert_eq!(env.sparse_reward(&next, &env.achieved_goal(&next)).unwrap(), 0.0);
            s = next;
        }
    }

    #[test]
    fn relabeled_windows_are_consistent(seed in any::<u64>(), n in 1usize..6, horizon in 1usize..12) {
        let env = Env::new(EnvConfig { horizon, ..EnvConfig::defaults(EnvKind::PointReach2d) }).unwrap();
        let mut rng = Prng::new(seed);
        let mut buffer = ReplayBuffer::new(10 * horizon, horizon).unwrap();
        for _ in 0..3 {
            let (s, g) = env.reset(&mut rng);
            let mut arng = Prng::new(rng.below(1 << 30) as u64);
            let ep = Episode::collect(&env, s, g, |_, _| {
                Ok(vec![arng.uniform_range(-1.0, 1.0) as f32, arng.uniform_range(-1.0, 1.0) as f32])
            })
            .unwrap();
            prop_assert_eq!(ep.horizon(), horizon);
            buffer.store_episode(ep, &env).unwrap();
        }
        let batch = buffer.sample_batch(&env, 64, n, 0.8, &mut rng).unwrap();
        for s in &batch {
            let ep = buffer.episode(s.episode);
            prop_assert_eq!(s.window_len, n.min(horizon - s.t));
            prop_assert_eq!(s.rewards.len(), s.window_len);
            for (i, r) in s.rewards.iter().enumerate() {
                prop_assert_eq!(*r, env.sparse_reward(&ep.states[s.t + i + 1], &s.goal).unwrap());
            }
            if s.relabeled {
                prop_assert!((s.t..=horizon).any(|j| ep.achieved_goals[j] == s.goal));
            } else {
                prop_assert_eq!(&s.goal, &ep.desired_goal);
            }
        }
        let ep = buffer.episode(0);
        for t in 0..horizon {
            let (g, _) = relabel_goal(ep, t, 1.0, &mut rng);
            if g == ep.achieved_goals[t + 1] {
                prop_assert_eq!(env.sparse_reward(&ep.states[t + 1], &g).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn zero_gradients_never_move_parameters(seed in any::<u64>(), len in 1usize..40, steps in 1usize..6) {
        let mut rng = Prng::new(seed);
        let mut adam = AdamState::new(len, 1e-3);
        let mut params: Vec<f32> = (0..len).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        for _ in 0..steps {
            let g: Vec<f32> = (0..len).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
            adam.step(&mut params, &g).unwrap();
        }
        let before = params.clone();
        adam.step(&mut params, &vec![0.0f32; len]).unwrap();
        prop_assert_eq!(params, before);
    }
}

/// A perfect model used with a deterministic policy produces on-policy
/// synthetic windows, so their bias is exactly zero.
#[test]
fn model_rollouts_with_true_dynamics_have_zero_bias() {
    let env = reach();
    for seed in 0..100 {
        let f = Fixture::new(seed);
        let nets = TargetNets::new(&f, &f, Some(ValueClip::for_gamma(0.98)));
        let mut rng = Prng::new(seed);
        let (s, g) = env.reset(&mut rng);
        let syn = mmher_rollout(&s, &g, &f, &env as &dyn Dynamics, &env, 5).unwrap();
        let w = ComposedWindow { states: syn.states, actions: syn.actions };
        assert_eq!(per_sample_bias(&w, &g, &nets, 0.98), 0.0);
    }
}
