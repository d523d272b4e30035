//! Binary run checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "MHERCKPT"
//! version    u32
//! epoch      u64
//! env_steps  u64
//! warmed_up  u8
//! params     4 x vec_f32      actor, critic, actor target, critic target
//! adam       2 x adam         actor, critic
//! obs norm   normalizer
//! has_model  u8, then if 1:   vec_f32 params, adam, normalizer (state), normalizer (action), u64 updates
//! prngs      6 x prng         env, exploration, sampling, diagnostics, evaluation, model
//!
//! vec_f32    u64 length, then values
//! vec_f64    u64 length, then values
//! adam       u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps, vec_f64 m, vec_f64 v
//! normalizer f64 count, f64 eps, vec_f64 mean, vec_f64 m2
//! prng       32-byte seed, u64 stream, u128 word position
//! ```
//!
//! The replay buffer is not saved.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::agent::Trainer;
use crate::dynamics::Normalizer;
use crate::error::{Error, Result};
use crate::numkit::{AdamState, ParamVector, Prng, PrngState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MHERCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec_f32(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn vec_f64(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.step_count);
        for x in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
            self.f64(x);
        }
        self.vec_f64(&a.first_moment);
        self.vec_f64(&a.second_moment);
    }
    fn normalizer(&mut self, n: &Normalizer) {
        self.f64(n.count());
        self.f64(n.epsilon());
        self.vec_f64(n.mean());
        self.vec_f64(n.m2());
    }
    fn prng(&mut self, p: &Prng) {
        let s = p.state();
        self.0.extend_from_slice(&s.seed);
        self.u64(s.stream);
        self.0.extend_from_slice(&s.word_pos.to_le_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

fn truncated() -> Error {
    Error::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "checkpoint is truncated"))
}

fn corrupt(msg: &str) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::InvalidData, format!("checkpoint does not match this run: {msg}")))
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|_| truncated())?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(width).is_none_or(|b| b > self.0.len()) {
            return Err(truncated());
        }
        Ok(n)
    }
    fn vec_f32(&mut self) -> Result<Vec<f32>> {
        let n = self.len(4)?;
        (0..n).map(|_| Ok(f32::from_le_bytes(self.take()?))).collect()
    }
    fn vec_f64(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn params(&mut self, like: &ParamVector, what: &str) -> Result<Vec<f32>> {
        let v = self.vec_f32()?;
        if v.len() != like.len() {
            return Err(corrupt(what));
        }
        Ok(v)
    }
    fn adam(&mut self, like: &AdamState, what: &str) -> Result<AdamState> {
        let step_count = self.u64()?;
        let (learning_rate, beta1, beta2, epsilon) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let first_moment = self.vec_f64()?;
        let second_moment = self.vec_f64()?;
        if first_moment.len() != like.first_moment.len() || second_moment.len() != like.second_moment.len() {
            return Err(corrupt(what));
        }
        Ok(AdamState { step_count, first_moment, second_moment, learning_rate, beta1, beta2, epsilon })
    }
    fn normalizer(&mut self, like: &Normalizer, what: &str) -> Result<Normalizer> {
        let count = self.f64()?;
        let eps = self.f64()?;
        let mean = self.vec_f64()?;
        let m2 = self.vec_f64()?;
        if mean.len() != like.dim() {
            return Err(corrupt(what));
        }
        Normalizer::from_parts(count, mean, m2, eps).map_err(|_| corrupt(what))
    }
    fn prng(&mut self) -> Result<Prng> {
        let seed = self.take::<32>()?;
        let stream = self.u64()?;
        let word_pos = u128::from_le_bytes(self.take()?);
        Ok(Prng::from_state(&PrngState { seed, stream, word_pos }))
    }
}

pub fn checkpoint_bytes(tr: &Trainer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(tr.epoch as u64);
    w.u64(tr.env_steps);
    w.u8(tr.warmed_up as u8);
    let a = &tr.agent;
    for p in [&a.actor, &a.critic, &a.actor_target, &a.critic_target] {
        w.vec_f32(p.as_slice());
    }
    w.adam(&a.actor_adam);
    w.adam(&a.critic_adam);
    w.normalizer(&a.obs_norm.stats);
    match &tr.model {
        Some(m) => {
            w.u8(1);
            w.vec_f32(m.params.as_slice());
            w.adam(&m.adam);
            w.normalizer(&m.state_norm);
            w.normalizer(&m.action_norm);
            w.u64(m.updates);
        }
        None => w.u8(0),
    }
    for p in [&tr.rng_env, &tr.rng_explore, &tr.rng_sample, &tr.rng_diag, &tr.rng_eval, &tr.rng_model] {
        w.prng(p);
    }
    w.0
}

pub fn save_checkpoint(tr: &Trainer, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(tr))?;
    Ok(())
}

/// Restores a checkpoint into a trainer built from the same configuration.
/// The trainer is only modified when the whole file parses.
pub fn load_checkpoint(tr: &mut Trainer, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    let mut r = Reader(&bytes);
    if &r.take::<8>()? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let mut next = tr.clone();
    next.epoch = r.u64()? as usize;
    next.env_steps = r.u64()?;
    next.warmed_up = r.u8()? != 0;
    {
        let a = &mut next.agent;
        let specs = [a.actor_spec.clone(), a.critic_spec.clone(), a.actor_spec.clone(), a.critic_spec.clone()];
        let slots = [&mut a.actor, &mut a.critic, &mut a.actor_target, &mut a.critic_target];
        for (slot, spec) in slots.into_iter().zip(&specs) {
            let v = r.params(slot, "network size")?;
            *slot = ParamVector::from_values(spec, v).map_err(|_| corrupt("non-finite parameters"))?;
        }
        a.actor_adam = r.adam(&a.actor_adam, "actor optimizer")?;
        a.critic_adam = r.adam(&a.critic_adam, "critic optimizer")?;
        a.obs_norm.stats = r.normalizer(&a.obs_norm.stats, "observation normalizer")?;
    }
    let has_model = r.u8()? != 0;
    match (&mut next.model, has_model) {
        (Some(m), true) => {
            let v = r.params(&m.params, "dynamics model size")?;
            m.params = ParamVector::from_values(&m.spec, v).map_err(|_| corrupt("non-finite model parameters"))?;
            m.adam = r.adam(&m.adam, "model optimizer")?;
            m.state_norm = r.normalizer(&m.state_norm, "model state normalizer")?;
            m.action_norm = r.normalizer(&m.action_norm, "model action normalizer")?;
            m.updates = r.u64()?;
        }
        (None, false) => {}
        _ => return Err(corrupt("dynamics model presence")),
    }
    next.rng_env = r.prng()?;
    next.rng_explore = r.prng()?;
    next.rng_sample = r.prng()?;
    next.rng_diag = r.prng()?;
    next.rng_eval = r.prng()?;
    next.rng_model = r.prng()?;
    if !r.0.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    *tr = next;
    Ok(())
}
