//! Seeded critic/policy fixtures and random point_reach windows shared by
//! the integration tests.

#![allow(dead_code)]

use mher::envkit::{Env, EnvConfig, EnvKind};
use mher::numkit::Prng;
use mher::targets::{ComposedWindow, GoalCritic, GoalPolicy};

/// Smooth, seeded critic and policy over point-task states and goals.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub w: [f64; 6],
    pub p: [f32; 4],
    pub scale: f64,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = Prng::new(seed);
        let mut w = [0.0; 6];
        for v in &mut w {
            *v = rng.uniform_range(-1.0, 1.0);
        }
        let mut p = [0.0; 4];
        for v in &mut p {
            *v = rng.uniform_range(-1.0, 1.0) as f32;
        }
        Self { w, p, scale: rng.uniform_range(0.5, 80.0) }
    }
}

impl GoalCritic for Fixture {
    fn q(&self, s: &[f32], a: &[f32], g: &[f32]) -> f64 {
        let d: f64 = s.iter().zip(g).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
        let aa: f64 = a.iter().map(|x| *x as f64).sum();
        -self.scale * (self.w[0].abs() * d.sqrt() + self.w[1] * aa + self.w[2] * s[0] as f64).abs()
            + self.w[3] * (aa * self.w[4]).sin()
            + self.w[5]
    }
}

impl GoalPolicy for Fixture {
    fn action(&self, s: &[f32], g: &[f32]) -> Vec<f32> {
        vec![
            (self.p[0] * (g[0] - s[0]) + self.p[1]).clamp(-1.0, 1.0),
            (self.p[2] * (g[1] - s[1]) + self.p[3]).clamp(-1.0, 1.0),
        ]
    }
}

pub fn reach() -> Env {
    Env::new(EnvConfig::defaults(EnvKind::PointReach2d)).unwrap()
}

/// Random behavior window of `n` steps through point_reach with rewards
/// under a random goal.
pub fn window(env: &Env, seed: u64, n: usize) -> (ComposedWindow, Vec<f32>, Vec<f32>) {
    let mut rng = Prng::new(seed);
    let (mut s, goal) = env.reset(&mut rng);
    s[0] = rng.uniform_range(-0.5, 0.5) as f32;
    let mut states = vec![s.clone()];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..n {
        let a: Vec<f32> = (0..2).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        let next = env.step(states.last().unwrap(), &a).unwrap();
        rewards.push(env.sparse_reward(&next, &goal).unwrap());
        actions.push(a);
        states.push(next);
    }
    (ComposedWindow { states, actions }, rewards, goal)
}

pub fn prefix(w: &ComposedWindow, n: usize) -> ComposedWindow {
    ComposedWindow { states: w.states[..=n].to_vec(), actions: w.actions[..n].to_vec() }
}
