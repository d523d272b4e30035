//! Learned state-delta dynamics model over normalized inputs.
//!
//! With `s_bar = (s - mu) / sigma` and `a_bar` normalized the same way, the
//! network `m` regresses `s_bar' - s_bar` on `(s_bar, a_bar)`, and the
//! prediction is `s' = (s_bar + m(s_bar, a_bar)) * sigma + mu`.

use crate::error::{check_len, Error, Result};
use crate::numkit::{backward_batch, forward_batch, AdamState, MlpSpec, OutputActivation, ParamVector, Prng};
use crate::targets::Dynamics;

pub const NORM_EPSILON: f64 = 1e-4;

/// Running per-coordinate mean and variance (population form).
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    dim: usize,
    count: f64,
    mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    m2: Vec<f64>,
    epsilon: f64,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self::with_epsilon(dim, NORM_EPSILON)
    }

    pub fn with_epsilon(dim: usize, epsilon: f64) -> Self {
        Self { dim, count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], epsilon }
    }

    /// Rebuilds a normalizer from saved statistics.
    pub fn from_parts(count: f64, mean: Vec<f64>, m2: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_len("normalizer m2", m2.len(), mean.len())?;
        Ok(Self { dim: mean.len(), count, mean, m2, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn variance(&self, i: usize) -> f64 {
        if self.count > 0.0 {
            self.m2[i] / self.count
        } else {
            0.0
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        self.variance(i).sqrt().max(self.epsilon)
    }

    /// Folds in a row-major batch of `dim`-vectors (batch mean and spread
    /// computed in two passes, then merged).
    pub fn update(&mut self, batch: &[f32]) -> Result<()> {
        if self.dim == 0 || batch.len() % self.dim != 0 {
            return Err(Error::config(format!(
                "normalizer batch of {} values is not a multiple of dimension {}",
                batch.len(),
                self.dim
            )));
        }
        let rows = batch.len() / self.dim;
        if rows == 0 {
            return Ok(());
        }
        let nb = rows as f64;
        let mut bmean = vec![0.0; self.dim];
        for row in batch.chunks_exact(self.dim) {
            for (m, x) in bmean.iter_mut().zip(row) {
                *m += *x as f64;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= nb);
        let mut bm2 = vec![0.0; self.dim];
        for row in batch.chunks_exact(self.dim) {
            for ((s, x), m) in bm2.iter_mut().zip(row).zip(&bmean) {
                let d = *x as f64 - m;
                *s += d * d;
            }
        }
        let na = self.count;
        let total = na + nb;
        for i in 0..self.dim {
            let delta = bmean[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += bm2[i] + delta * delta * na * nb / total;
        }
        self.count = total;
        Ok(())
    }

    pub fn normalize(&self, x: &[f32]) -> Vec<f32> {
        x.iter().enumerate().map(|(i, v)| ((*v as f64 - self.mean[i]) / self.std(i)) as f32).collect()
    }

    pub fn denormalize(&self, z: &[f32]) -> Vec<f32> {
        z.iter().enumerate().map(|(i, v)| (*v as f64 * self.std(i) + self.mean[i]) as f32).collect()
    }
}

/// Size and optimizer settings for [`DynamicsModel`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsConfig {
    pub hidden: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_updates: usize,
    pub updates_per_batch: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { hidden: 128, depth: 4, learning_rate: 1e-3, batch_size: 512, warmup_updates: 100, updates_per_batch: 2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub adam: AdamState,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
    pub updates: u64,
}

impl DynamicsModel {
    /// Random hidden layers and a zero output layer, so the untrained model
    /// predicts `s' = s`.
    pub fn new(state_dim: usize, action_dim: usize, config: &DynamicsConfig, rng: &mut Prng) -> Result<Self> {
        let spec = MlpSpec::with_hidden(
            state_dim + action_dim,
            config.hidden,
            config.depth,
            state_dim,
            OutputActivation::Linear,
        )?;
        let mut params = spec.init_params(rng);
        let last = spec.layers().len() - 1;
        params.weights_mut(last).fill(0.0);
        params.bias_mut(last).fill(0.0);
        let adam = AdamState::new(spec.param_count(), config.learning_rate);
        Ok(Self {
            spec,
            params,
            adam,
            state_norm: Normalizer::new(state_dim),
            action_norm: Normalizer::new(action_dim),
            updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_norm.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_norm.dim()
    }

    /// Updates both normalizers from row-major states and actions.
    pub fn observe(&mut self, states: &[f32], actions: &[f32]) -> Result<()> {
        self.state_norm.update(states)?;
        self.action_norm.update(actions)
    }

    fn inputs(&self, states: &[f32], actions: &[f32], rows: usize) -> (Vec<f32>, Vec<f32>) {
        let (sd, ad) = (self.state_dim(), self.action_dim());
        let mut x = Vec::with_capacity(rows * (sd + ad));
        let mut s_bar = Vec::with_capacity(rows * sd);
        for r in 0..rows {
            let s = self.state_norm.normalize(&states[r * sd..(r + 1) * sd]);
            x.extend_from_slice(&s);
            x.extend(self.action_norm.normalize(&actions[r * ad..(r + 1) * ad]));
            s_bar.extend(s);
        }
        (x, s_bar)
    }

    /// Mean over the batch of `||s_bar' - s_bar - m(s_bar, a_bar)||^2`.
    pub fn loss(&self, states: &[f32], actions: &[f32], next_states: &[f32]) -> Result<f64> {
        Ok(self.loss_and_residuals(states, actions, next_states)?.0)
    }

    fn loss_and_residuals(
        &self,
        states: &[f32],
        actions: &[f32],
        next_states: &[f32],
    ) -> Result<(f64, Vec<f32>, crate::numkit::Tape<f32>)> {
        let sd = self.state_dim();
        let rows = self.batch_rows(states, actions, next_states)?;
        let (x, s_bar) = self.inputs(states, actions, rows);
        let tape = forward_batch(&self.spec, self.params.as_slice(), &x, rows)?;
        let mut resid = Vec::with_capacity(rows * sd);
        let mut total = 0.0;
        for r in 0..rows {
            let next_bar = self.state_norm.normalize(&next_states[r * sd..(r + 1) * sd]);
            for i in 0..sd {
                let target = next_bar[i] as f64 - s_bar[r * sd + i] as f64;
                let e = tape.output()[r * sd + i] as f64 - target;
                total += e * e;
                resid.push(e as f32);
            }
        }
        Ok((total / rows as f64, resid, tape))
    }

    fn batch_rows(&self, states: &[f32], actions: &[f32], next_states: &[f32]) -> Result<usize> {
        let sd = self.state_dim();
        if sd == 0 || states.is_empty() || states.len() % sd != 0 {
            return Err(Error::config("dynamics batch must hold at least one whole state"));
        }
        let rows = states.len() / sd;
        check_len("dynamics batch actions", actions.len(), rows * self.action_dim())?;
        check_len("dynamics batch next states", next_states.len(), rows * sd)?;
        Ok(rows)
    }

    /// One Adam step on the normalized-delta regression; returns the
    /// pre-step loss.
    pub fn train_step(&mut self, states: &[f32], actions: &[f32], next_states: &[f32]) -> Result<f64> {
        let (loss, resid, tape) = self.loss_and_residuals(states, actions, next_states)?;
        if !loss.is_finite() {
            return Err(Error::training(format!("dynamics loss is not finite ({loss})")));
        }
        let scale = 2.0 / tape.batch() as f32;
        let upstream: Vec<f32> = resid.iter().map(|e| e * scale).collect();
        let g = backward_batch(&self.spec, self.params.as_slice(), &tape, &upstream, true, false)?;
        self.adam.step(self.params.as_mut_slice(), &g.params)?;
        self.updates += 1;
        Ok(loss)
    }

    pub fn predict(&self, state: &[f32], action: &[f32]) -> Result<Vec<f32>> {
        check_len("dynamics state", state.len(), self.state_dim())?;
        check_len("dynamics action", action.len(), self.action_dim())?;
        let (x, s_bar) = self.inputs(state, action, 1);
        let tape = forward_batch(&self.spec, self.params.as_slice(), &x, 1)?;
        let next_bar: Vec<f32> = s_bar.iter().zip(tape.output()).map(|(s, d)| s + d).collect();
        Ok(self.state_norm.denormalize(&next_bar))
    }
}

impl Dynamics for DynamicsModel {
    fn predict_next(&self, state: &[f32], action: &[f32]) -> Result<Vec<f32>> {
        self.predict(state, action)
    }
}
