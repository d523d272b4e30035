//! Seeded multi-goal environments with the sparse `{0, -1}` reward, plus a
//! small tabular MDP used as an exact oracle.
//!
//! Layouts:
//!
//! | kind                 | state                      | action | achieved goal |
//! |----------------------|----------------------------|--------|---------------|
//! | `point_reach_2d`     | `[x, y]`                   | 2      | `[x, y]`      |
//! | `point_push_2d`      | `[gx, gy, bx, by]`         | 2      | `[bx, by]`    |
//! | `bitflip_continuous` | `n` bits as `0.0` / `1.0`  | `n`    | all bits      |
//! | `tabular_chain`      | `[cell index]`             | 1      | `[cell]`      |
//!
//! Rewards are always evaluated on the *next* state: a transition
//! `(s_t, a_t, s_{t+1})` under goal `g` earns `0` iff
//! `||phi(s_{t+1}) - g||^2 < threshold`.

mod tabular;

use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};
use crate::numkit::Prng;

pub use tabular::{value_iteration, QTable, TabularMdp};

pub type State = Vec<f32>;
pub type Goal = Vec<f32>;
pub type Action = Vec<f32>;

/// Arena half-width of the point tasks.
pub const ARENA: f32 = 1.0;
/// Displacement per unit action in the point tasks.
pub const POINT_STEP: f32 = 0.1;
/// Contact radius of gripper and box in `point_push_2d`.
pub const CONTACT_RADIUS: f32 = 0.05;
/// Action magnitude above which a bit toggles.
pub const FLIP_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    PointReach2d,
    PointPush2d,
    BitflipContinuous,
    TabularChain,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] =
        [EnvKind::PointReach2d, EnvKind::PointPush2d, EnvKind::BitflipContinuous, EnvKind::TabularChain];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointReach2d => "point_reach_2d",
            EnvKind::PointPush2d => "point_push_2d",
            EnvKind::BitflipContinuous => "bitflip_continuous",
            EnvKind::TabularChain => "tabular_chain",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    /// Full names, or the short forms `point_reach`, `point_push`,
    /// `bitflip` and `chain`.
    fn from_str(s: &str) -> Result<Self> {
        let short = match s {
            "point_reach" => Some(EnvKind::PointReach2d),
            "point_push" => Some(EnvKind::PointPush2d),
            "bitflip" => Some(EnvKind::BitflipContinuous),
            "chain" => Some(EnvKind::TabularChain),
            _ => None,
        };
        short
            .or_else(|| EnvKind::ALL.into_iter().find(|k| k.name() == s))
            .ok_or_else(|| Error::usage(format!("unknown environment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub horizon: usize,
    /// Bound on the squared goal distance.
    pub threshold: f64,
    /// Bit count for `bitflip_continuous`.
    pub bits: usize,
    /// Cell count for `tabular_chain`.
    pub chain_len: usize,
    /// Point-task goals (and push-task box starts) are uniform in
    /// `[-goal_range, goal_range]^2`.
    pub goal_range: f64,
}

impl EnvConfig {
    pub fn defaults(kind: EnvKind) -> Self {
        let base = Self { kind, horizon: 50, threshold: 0.0025, bits: 8, chain_len: 5, goal_range: 0.5 };
        match kind {
            EnvKind::PointReach2d | EnvKind::PointPush2d => base,
            EnvKind::BitflipContinuous => Self { horizon: 8, threshold: 0.5, ..base },
            EnvKind::TabularChain => Self { horizon: 10, threshold: 0.25, ..base },
        }
    }

    pub fn bitflip(bits: usize) -> Self {
        Self { bits, horizon: bits, ..Self::defaults(EnvKind::BitflipContinuous) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config(format!("horizon must be at least 1, got {}", self.horizon)));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if !(self.goal_range >= 0.0 && self.goal_range <= ARENA as f64) {
            return Err(Error::config(format!("goal_range must lie in [0, {ARENA}], got {}", self.goal_range)));
        }
        match self.kind {
            EnvKind::BitflipContinuous if self.bits == 0 => Err(Error::config("bitflip needs at least one bit")),
            EnvKind::TabularChain if self.chain_len < 2 => Err(Error::config("chain needs at least two cells")),
            _ => Ok(()),
        }
    }
}

/// A configured environment. Stepping is a pure function of
/// `(state, action)`; all randomness enters through [`Env::reset`].
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn kind(&self) -> EnvKind {
        self.config.kind
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn state_dim(&self) -> usize {
        match self.config.kind {
            EnvKind::PointReach2d => 2,
            EnvKind::PointPush2d => 4,
            EnvKind::BitflipContinuous => self.config.bits,
            EnvKind::TabularChain => 1,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.config.kind {
            EnvKind::PointReach2d | EnvKind::PointPush2d => 2,
            EnvKind::BitflipContinuous => self.config.bits,
            EnvKind::TabularChain => 1,
        }
    }

    pub fn goal_dim(&self) -> usize {
        match self.config.kind {
            EnvKind::PointReach2d | EnvKind::PointPush2d => 2,
            EnvKind::BitflipContinuous => self.config.bits,
            EnvKind::TabularChain => 1,
        }
    }

    pub fn reset(&self, rng: &mut Prng) -> (State, Goal) {
        let c = &self.config;
        let gr = c.goal_range;
        match c.kind {
            EnvKind::PointReach2d => {
                let goal = vec![rng.uniform_range(-gr, gr) as f32, rng.uniform_range(-gr, gr) as f32];
                (vec![0.0, 0.0], goal)
            }
            EnvKind::PointPush2d => {
                let min_gap = 2.0 * CONTACT_RADIUS as f64;
                let (bx, by) = loop {
                    let b = (rng.uniform_range(-gr, gr), rng.uniform_range(-gr, gr));
                    if (b.0 * b.0 + b.1 * b.1).sqrt() > min_gap || gr == 0.0 {
                        break b;
                    }
                };
                let goal = vec![rng.uniform_range(-gr, gr) as f32, rng.uniform_range(-gr, gr) as f32];
                (vec![0.0, 0.0, bx as f32, by as f32], goal)
            }
            EnvKind::BitflipContinuous => {
                let n = c.bits;
                let start: Vec<f32> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
                loop {
                    let goal: Vec<f32> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
                    if goal != start {
                        return (start, goal);
                    }
                }
            }
            EnvKind::TabularChain => {
                let start = rng.below(c.chain_len) as f32;
                let goal = rng.below(c.chain_len) as f32;
                (vec![start], vec![goal])
            }
        }
    }

    /// Deterministic transition. Actions are clipped to `[-1, 1]` first.
    pub fn step(&self, state: &[f32], action: &[f32]) -> Result<State> {
        check_len("state", state.len(), self.state_dim())?;
        check_len("action", action.len(), self.action_dim())?;
        if let Some(i) = action.iter().position(|a| !a.is_finite()) {
            return Err(Error::training(format!("non-finite action coordinate {i}")));
        }
        let a: Vec<f32> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(match self.config.kind {
            EnvKind::PointReach2d => move_point(state, &a),
            EnvKind::PointPush2d => {
                let gripper = move_point(&state[..2], &a);
                let mut next = vec![gripper[0], gripper[1], state[2], state[3]];
                if gripper[..] != state[..2] {
                    push_box(&mut next, &a);
                }
                next
            }
            EnvKind::BitflipContinuous => state
                .iter()
                .zip(&a)
                .map(|(&bit, &ai)| if ai > FLIP_THRESHOLD { 1.0 - bit } else { bit })
                .collect(),
            EnvKind::TabularChain => {
                let cell = state[0] as i64 + chain_move(a[0]);
                vec![cell.clamp(0, self.config.chain_len as i64 - 1) as f32]
            }
        })
    }

    /// The goal-space projection `phi`.
    pub fn achieved_goal(&self, state: &[f32]) -> Goal {
        match self.config.kind {
            EnvKind::PointPush2d => state[2..4].to_vec(),
            _ => state.to_vec(),
        }
    }

    /// Sparse reward of reaching `next_state` under `goal`.
    pub fn sparse_reward(&self, next_state: &[f32], goal: &[f32]) -> Result<f32> {
        check_len("state", next_state.len(), self.state_dim())?;
        self.reward_from_achieved(&self.achieved_goal(next_state), goal)
    }

    /// Sparse reward from an already projected achieved goal.
    pub fn reward_from_achieved(&self, achieved: &[f32], goal: &[f32]) -> Result<f32> {
        check_len("achieved goal", achieved.len(), self.goal_dim())?;
        check_len("goal", goal.len(), self.goal_dim())?;
        Ok(self.reward_unchecked(achieved, goal))
    }

    #[inline]
    pub(crate) fn reward_unchecked(&self, achieved: &[f32], goal: &[f32]) -> f32 {
        let d2: f64 = achieved
            .iter()
            .zip(goal)
            .map(|(a, g)| {
                let d = *a as f64 - *g as f64;
                d * d
            })
            .sum();
        if d2 < self.config.threshold {
            0.0
        } else {
            -1.0
        }
    }

    /// Tabular view of `tabular_chain` under a fixed goal cell.
    ///
    /// Action indices 0, 1, 2 mean left, stay, right; use
    /// [`chain_action`] for the matching continuous action.
    pub fn chain_mdp(&self, goal_cell: usize, gamma: f64) -> Result<TabularMdp> {
        if self.config.kind != EnvKind::TabularChain {
            return Err(Error::config("chain_mdp needs a tabular_chain environment"));
        }
        let n = self.config.chain_len;
        if goal_cell >= n {
            return Err(Error::config(format!("goal cell {goal_cell} outside chain of {n}")));
        }
        let mut transitions = vec![0.0; n * 3 * n];
        let mut rewards = vec![0.0; n * 3];
        for s in 0..n {
            for a in 0..3 {
                let next = self.step(&[s as f32], &chain_action(a))?;
                let sn = next[0] as usize;
                transitions[(s * 3 + a) * n + sn] = 1.0;
                rewards[s * 3 + a] = self.sparse_reward(&next, &[goal_cell as f32])? as f64;
            }
        }
        TabularMdp::new(n, 3, transitions, rewards, gamma)
    }
}

/// Continuous action driving `tabular_chain` action index `a`.
pub fn chain_action(a: usize) -> Action {
    vec![a as f32 - 1.0]
}

fn chain_move(a: f32) -> i64 {
    if a > 1.0 / 3.0 {
        1
    } else if a < -1.0 / 3.0 {
        -1
    } else {
        0
    }
}

fn move_point(pos: &[f32], a: &[f32]) -> Vec<f32> {
    pos.iter().zip(a).map(|(p, ai)| (p + POINT_STEP * ai).clamp(-ARENA, ARENA)).collect()
}

/// Resolves gripper/box overlap by moving the box out along the contact
/// normal (or along the gripper's motion when the centres coincide).
fn push_box(state: &mut [f32], a: &[f32]) {
    let contact = 2.0 * CONTACT_RADIUS;
    let (gx, gy) = (state[0], state[1]);
    let (dx, dy) = (state[2] - gx, state[3] - gy);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist >= contact {
        return;
    }
    let (nx, ny) = if dist > 0.0 {
        (dx / dist, dy / dist)
    } else {
        let m = (a[0] * a[0] + a[1] * a[1]).sqrt();
        (a[0] / m, a[1] / m)
    };
    state[2] = (gx + nx * contact).clamp(-ARENA, ARENA);
    state[3] = (gy + ny * contact).clamp(-ARENA, ARENA);
}
