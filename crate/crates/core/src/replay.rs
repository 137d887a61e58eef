//! Fixed-capacity experience replay with uniform sampling.

use rand::Rng;

use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One `(s, a, r, s')` experience.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_state: Observation,
}

/// Ring buffer that evicts the oldest transition once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            write_cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.write_cursor] = transition;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.write_cursor
        };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// `n` independent uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(rng, n)?
            .into_iter()
            .map(|i| self.storage[i])
            .collect())
    }

    /// Storage slots chosen by a draw; exposed for sampling diagnostics.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.storage.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }
}

/// A minibatch laid out as network-ready matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
}

impl Batch {
    pub fn from_transitions(transitions: &[Transition]) -> Self {
        let n = transitions.len();
        let mut states = Vec::with_capacity(n * Observation::DIM);
        let mut next_states = Vec::with_capacity(n * Observation::DIM);
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for t in transitions {
            states.extend_from_slice(&t.state.to_array());
            next_states.extend_from_slice(&t.next_state.to_array());
            actions.push(t.action.torque);
            rewards.push(t.reward);
        }
        Self {
            states: Matrix::from_vec(n, Observation::DIM, states).expect("batch shape"),
            actions: Matrix::from_vec(n, Action::DIM, actions).expect("batch shape"),
            rewards,
            next_states: Matrix::from_vec(n, Observation::DIM, next_states).expect("batch shape"),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
