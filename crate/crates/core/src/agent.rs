//! The four-network DDPG learner.
//!
//! `actor` is the deterministic policy, `critic` the action-value function;
//! each has a slowly tracking target copy used only for bootstrapped targets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, MAX_TORQUE};
use crate::error::{Error, Result};
use crate::nn::{init_network, Activation, AdamState, Gradients, Matrix, Mlp};
use crate::noise::OuProcess;
use crate::replay::{Batch, ReplayBuffer};

/// Width of the critic input: observation followed by action.
pub const CRITIC_INPUT_DIM: usize = Observation::DIM + Action::DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticLoss {
    Mae,
    Mse,
    /// Huber with `delta = 1`.
    Huber,
}

impl CriticLoss {
    pub const HUBER_DELTA: f64 = 1.0;

    pub fn code(self) -> u8 {
        match self {
            CriticLoss::Mae => 0,
            CriticLoss::Mse => 1,
            CriticLoss::Huber => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CriticLoss::Mae),
            1 => Some(CriticLoss::Mse),
            2 => Some(CriticLoss::Huber),
            _ => None,
        }
    }

    /// Mean loss over the batch and its gradient with respect to each prediction.
    pub fn value_and_grad(self, targets: &[f64], predictions: &[f64]) -> (f64, Vec<f64>) {
        let n = targets.len() as f64;
        let mut total = 0.0;
        let grads = targets
            .iter()
            .zip(predictions)
            .map(|(&y, &q)| {
                let e = y - q;
                let (loss, dloss_dq) = match self {
                    CriticLoss::Mae => (e.abs(), -sign(e)),
                    CriticLoss::Mse => (e * e, -2.0 * e),
                    CriticLoss::Huber => {
                        let d = Self::HUBER_DELTA;
                        if e.abs() <= d {
                            (0.5 * e * e, -e)
                        } else {
                            (d * (e.abs() - 0.5 * d), -d * sign(e))
                        }
                    }
                };
                total += loss;
                dloss_dq / n
            })
            .collect();
        (total / n, grads)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for CriticLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriticLoss::Mae => "mae",
            CriticLoss::Mse => "mse",
            CriticLoss::Huber => "huber",
        })
    }
}

impl FromStr for CriticLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(CriticLoss::Mae),
            "mse" => Ok(CriticLoss::Mse),
            "huber" => Ok(CriticLoss::Huber),
            other => Err(Error::InvalidConfig(format!("unknown critic loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Train steps between soft target updates.
    pub update_period: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub critic_loss: CriticLoss,
    pub hidden_sizes: Vec<usize>,
    pub final_layer_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.05,
            update_period: 5,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 32,
            critic_loss: CriticLoss::Mae,
            hidden_sizes: vec![400, 300],
            final_layer_scale: 3e-3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.update_period == 0 {
            return bad("update_period must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {lr}"));
            }
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden_sizes);
        sizes.push(1);
        sizes
    }

    fn activations(&self, output: Activation) -> Vec<Activation> {
        let mut acts = vec![Activation::Relu; self.hidden_sizes.len()];
        acts.push(output);
        acts
    }
}

/// Losses from one training step. The actor term is the surrogate `-mean Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub total_loss: f64,
}

impl LossReport {
    pub fn new(critic_loss: f64, actor_loss: f64) -> Self {
        Self {
            critic_loss,
            actor_loss,
            total_loss: critic_loss + actor_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgAgent {
    pub config: AgentConfig,
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub critic: Mlp,
    pub target_critic: Mlp,
    pub actor_optimizer: AdamState,
    pub critic_optimizer: AdamState,
    pub train_step_count: u64,
}

/// Stacks observations and actions column-wise into critic inputs.
fn critic_input(states: &Matrix, actions: &Matrix) -> Matrix {
    let n = states.rows();
    let mut data = Vec::with_capacity(n * CRITIC_INPUT_DIM);
    for i in 0..n {
        data.extend_from_slice(states.row(i));
        data.extend_from_slice(actions.row(i));
    }
    Matrix::from_vec(n, CRITIC_INPUT_DIM, data).expect("critic input shape")
}

fn scale(m: &Matrix, factor: f64) -> Matrix {
    let data = m.as_slice().iter().map(|v| v * factor).collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

impl DdpgAgent {
    /// Randomly initialises the online networks and copies them into the targets.
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor = init_network(
            rng,
            &config.layer_sizes(Observation::DIM),
            &config.activations(Activation::Tanh),
            config.final_layer_scale,
        )?;
        let critic = init_network(
            rng,
            &config.layer_sizes(CRITIC_INPUT_DIM),
            &config.activations(Activation::Linear),
            config.final_layer_scale,
        )?;
        Self::from_networks(config, actor, critic)
    }

    /// Builds an agent around given online networks; targets start as copies.
    pub fn from_networks(config: AgentConfig, actor: Mlp, critic: Mlp) -> Result<Self> {
        config.validate()?;
        if actor.input_dim() != Observation::DIM || actor.output_dim() != Action::DIM {
            return Err(Error::ArchitectureMismatch(format!(
                "actor must map {} -> {}",
                Observation::DIM,
                Action::DIM
            )));
        }
        if critic.input_dim() != CRITIC_INPUT_DIM || critic.output_dim() != 1 {
            return Err(Error::ArchitectureMismatch(format!(
                "critic must map {CRITIC_INPUT_DIM} -> 1"
            )));
        }
        Ok(Self {
            actor_optimizer: AdamState::new(&actor),
            critic_optimizer: AdamState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            config,
            train_step_count: 0,
        })
    }

    /// Deterministic policy output before noise and clipping.
    pub fn policy(&self, obs: &Observation) -> f64 {
        let (out, _) = self
            .actor
            .forward(&obs.to_array())
            .expect("actor takes observations");
        MAX_TORQUE * out[0]
    }

    /// `clip(mu(s) + N_t, -2, 2)`; without noise the result is deterministic.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        noise: Option<&mut OuProcess>,
        rng: &mut R,
    ) -> Action {
        let mut torque = self.policy(obs);
        if let Some(process) = noise {
            torque += process.sample(rng);
        }
        Action::new(torque).clipped()
    }

    /// `y_i = r_i + gamma * Q'(s'_i, mu'(s'_i))`, computed with target networks only.
    pub fn compute_targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        let (next_actions, _) = self.target_actor.forward_batch(&batch.next_states)?;
        let next_actions = scale(&next_actions, MAX_TORQUE);
        let (next_q, _) = self
            .target_critic
            .forward_batch(&critic_input(&batch.next_states, &next_actions))?;
        Ok(batch
            .rewards
            .iter()
            .zip(next_q.as_slice())
            .map(|(r, q)| r + self.config.gamma * q)
            .collect())
    }

    /// Critic loss at the current parameters and its parameter gradient.
    pub fn critic_gradient(&self, batch: &Batch, targets: &[f64]) -> Result<(f64, Gradients)> {
        if targets.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: targets.len(),
                context: "critic targets",
            });
        }
        let (q, cache) = self
            .critic
            .forward_batch(&critic_input(&batch.states, &batch.actions))?;
        let (loss, dq) = self.config.critic_loss.value_and_grad(targets, q.as_slice());
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { what: "critic", value: loss });
        }
        let (grads, _) = self
            .critic
            .backward(&cache, &Matrix::from_vec(dq.len(), 1, dq)?)?;
        Ok((loss, grads))
    }

    /// One Adam step on the critic. Returns the loss before the update.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let (loss, grads) = self.critic_gradient(batch, targets)?;
        self.critic_optimizer
            .step(&mut self.critic, &grads, self.config.critic_lr)?;
        Ok(loss)
    }

    /// Surrogate actor loss `-mean Q(s, mu(s))` and its gradient with respect
    /// to the actor parameters, back-propagated through the frozen critic.
    pub fn actor_gradient(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        let (raw, actor_cache) = self.actor.forward_batch(&batch.states)?;
        let actions = scale(&raw, MAX_TORQUE);
        let (q, critic_cache) = self
            .critic
            .forward_batch(&critic_input(&batch.states, &actions))?;
        let loss = -q.as_slice().iter().sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { what: "actor", value: loss });
        }
        let dq = Matrix::from_vec(n, 1, vec![-1.0 / n as f64; n])?;
        let dinput = self.critic.input_gradient(&critic_cache, &dq)?;
        // dL/d(raw actor output) = dL/da * da/draw
        let draw: Vec<f64> = (0..n)
            .map(|i| dinput.get(i, Observation::DIM) * MAX_TORQUE)
            .collect();
        let (grads, _) = self
            .actor
            .backward(&actor_cache, &Matrix::from_vec(n, 1, draw)?)?;
        Ok((loss, grads))
    }

    /// One Adam step on the actor. Returns the surrogate loss before the update.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grads) = self.actor_gradient(batch)?;
        self.actor_optimizer
            .step(&mut self.actor, &grads, self.config.actor_lr)?;
        Ok(loss)
    }

    /// Targets, critic step, actor step, then a soft target update every
    /// `update_period` train steps.
    pub fn train_on_batch(&mut self, batch: &Batch) -> Result<LossReport> {
        let targets = self.compute_targets(batch)?;
        let critic_loss = self.critic_update(batch, &targets)?;
        let actor_loss = self.actor_update(batch)?;
        self.train_step_count += 1;
        if self.train_step_count.is_multiple_of(self.config.update_period) {
            self.soft_update_targets()?;
        }
        Ok(LossReport::new(critic_loss, actor_loss))
    }

    /// Samples a minibatch of the configured size and trains on it.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<LossReport> {
        let transitions = buffer.sample(rng, self.config.batch_size)?;
        self.train_on_batch(&Batch::from_transitions(&transitions))
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_critic.soft_update_from(&self.critic, tau)
    }
}
