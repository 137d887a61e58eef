//! Self-describing binary checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic            8 bytes  "DDPGCKPT"
//! version          u32
//! config           u32 length + UTF-8 JSON of the TrainConfig
//! iteration        u64
//! train_step_count u64
//! networks         actor, target_actor, critic, target_critic; each is
//!                  u32 layer count, then per layer u32 in, u32 out,
//!                  u8 activation, in*out f64 weights, out f64 biases
//! optimizers       actor then critic; each is u64 step count, f64 beta1,
//!                  f64 beta2, f64 epsilon, u64 n, n f64 first moments,
//!                  n f64 second moments (flat parameter order)
//! noise            f64 theta_drift, sigma, mu, dt, value
//! env state        f64 theta, f64 theta_dot, u64 step_index
//! rng streams      env, noise, replay; each is 32-byte seed, u64 stream,
//!                  u128 word position
//! ```
//!
//! Replay buffer contents are not stored; a restored run refills its buffer
//! from fresh experience.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::agent::DdpgAgent;
use crate::env::PendulumState;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Gradients, Layer, Mlp};
use crate::noise::OuProcess;
use crate::trainer::{RngStreams, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"DDPGCKPT";
pub const VERSION: u32 = 1;

/// Everything needed to resume a run except the replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub agent: DdpgAgent,
    pub noise: OuProcess,
    pub env_state: PendulumState,
    pub rngs: RngStreams,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            config: trainer.config.clone(),
            iteration: trainer.iteration,
            agent: trainer.agent.clone(),
            noise: trainer.noise,
            env_state: trainer.env_state,
            rngs: trainer.rngs.clone(),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Trainer::restore(
            self.config,
            self.agent,
            self.noise,
            self.env_state,
            self.rngs,
            self.iteration,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let config = serde_json::to_vec(&self.config)
            .map_err(|e| Error::CorruptCheckpoint(format!("config encoding: {e}")))?;
        w.u32(config.len() as u32);
        w.0.extend_from_slice(&config);
        w.u64(self.iteration);

        let agent = &self.agent;
        w.u64(agent.train_step_count);
        for net in [&agent.actor, &agent.target_actor, &agent.critic, &agent.target_critic] {
            w.network(net);
        }
        for opt in [&agent.actor_optimizer, &agent.critic_optimizer] {
            w.u64(opt.step_count);
            w.f64(opt.beta1);
            w.f64(opt.beta2);
            w.f64(opt.epsilon);
            let first = opt.first_moments.flatten();
            let second = opt.second_moments.flatten();
            w.u64(first.len() as u64);
            first.iter().chain(&second).for_each(|&v| w.f64(v));
        }

        let n = &self.noise;
        for v in [n.theta_drift(), n.sigma(), n.mu(), n.dt(), n.value()] {
            w.f64(v);
        }
        w.f64(self.env_state.theta);
        w.f64(self.env_state.theta_dot);
        w.u64(self.env_state.step_index as u64);

        for rng in [&self.rngs.env, &self.rngs.noise, &self.rngs.replay] {
            w.0.extend_from_slice(&rng.get_seed());
            w.u64(rng.get_stream());
            w.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let config_len = r.u32("config length")? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(config_len, "config")?)
            .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let iteration = r.u64("iteration")?;

        let train_step_count = r.u64("train step count")?;
        let actor = r.network("actor")?;
        let target_actor = r.network("target actor")?;
        let critic = r.network("critic")?;
        let target_critic = r.network("target critic")?;
        let actor_optimizer = r.adam(&actor, "actor optimizer")?;
        let critic_optimizer = r.adam(&critic, "critic optimizer")?;

        let mut noise = OuProcess::new(
            r.f64("noise")?,
            r.f64("noise")?,
            r.f64("noise")?,
            r.f64("noise")?,
        )
        .map_err(|e| Error::CorruptCheckpoint(format!("noise: {e}")))?;
        noise.set_value(r.f64("noise")?);

        let env_state = PendulumState {
            theta: r.f64("env state")?,
            theta_dot: r.f64("env state")?,
            step_index: r.u64("env state")? as usize,
        };
        let rngs = RngStreams {
            env: r.rng("env rng")?,
            noise: r.rng("noise rng")?,
            replay: r.rng("replay rng")?,
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        if !actor.same_architecture(&target_actor) || !critic.same_architecture(&target_critic) {
            return Err(Error::CorruptCheckpoint(
                "target networks differ from their online counterparts".into(),
            ));
        }
        let mut agent = DdpgAgent::from_networks(config.agent_config(), actor, critic)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        agent.config.hidden_sizes = agent.actor.layers()[..agent.actor.layers().len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect();
        agent.target_actor = target_actor;
        agent.target_critic = target_critic;
        agent.actor_optimizer = actor_optimizer;
        agent.critic_optimizer = critic_optimizer;
        agent.train_step_count = train_step_count;

        Ok(Self {
            config,
            iteration,
            agent,
            noise,
            env_state,
            rngs,
        })
    }
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_trainer(trainer).to_bytes()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Checkpoint::from_bytes(&bytes)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn network(&mut self, net: &Mlp) {
        self.u32(net.layers().len() as u32);
        for layer in net.layers() {
            self.u32(layer.in_dim() as u32);
            self.u32(layer.out_dim() as u32);
            self.0.push(layer.activation.code());
            layer.weights.iter().chain(&layer.bias).for_each(|&v| self.f64(v));
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let slice = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn reals(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated(what))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn network(&mut self, what: &'static str) -> Result<Mlp> {
        let n_layers = self.u32(what)? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let in_dim = self.u32(what)? as usize;
            let out_dim = self.u32(what)? as usize;
            let code = self.u8(what)?;
            let activation = Activation::from_code(code)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{what}: activation code {code}")))?;
            let weights = self.reals(in_dim.saturating_mul(out_dim), what)?;
            let bias = self.reals(out_dim, what)?;
            layers.push(
                Layer::new(in_dim, out_dim, weights, bias, activation)
                    .map_err(|e| Error::CorruptCheckpoint(format!("{what}: {e}")))?,
            );
        }
        Mlp::from_layers(layers).map_err(|e| Error::CorruptCheckpoint(format!("{what}: {e}")))
    }

    fn adam(&mut self, net: &Mlp, what: &'static str) -> Result<AdamState> {
        let step_count = self.u64(what)?;
        let mut state = AdamState::with_hyperparams(net, self.f64(what)?, self.f64(what)?, self.f64(what)?);
        state.step_count = step_count;
        let n = self.u64(what)? as usize;
        if n != net.param_count() {
            return Err(Error::CorruptCheckpoint(format!(
                "{what}: {n} moments for {} parameters",
                net.param_count()
            )));
        }
        let first = self.reals(n, what)?;
        let second = self.reals(n, what)?;
        unflatten(&mut state.first_moments, &first);
        unflatten(&mut state.second_moments, &second);
        Ok(state)
    }

    fn rng(&mut self, what: &'static str) -> Result<ChaCha8Rng> {
        let seed = self.array::<32>(what)?;
        let stream = self.u64(what)?;
        let word_pos = u128::from_le_bytes(self.array(what)?);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

fn unflatten(target: &mut Gradients, flat: &[f64]) {
    let mut offset = 0;
    for (w, b) in target.weights.iter_mut().zip(target.biases.iter_mut()) {
        let (nw, nb) = (w.len(), b.len());
        w.copy_from_slice(&flat[offset..offset + nw]);
        offset += nw;
        b.copy_from_slice(&flat[offset..offset + nb]);
        offset += nb;
    }
}
