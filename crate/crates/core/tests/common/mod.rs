//! Independent oracles shared by the integration tests.
//!
//! Everything here evaluates networks through `forward` only, or through
//! hand-derived formulas, so it never touches the backprop code under test.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swingup::agent::{DdpgAgent, CRITIC_INPUT_DIM};
use swingup::env::{Action, Observation, MAX_TORQUE};
use swingup::nn::{Matrix, Mlp};
use swingup::replay::{Batch, Transition};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error; two exact zeros agree.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
    let theta: f64 = rng.random_range(-3.1..3.1);
    Observation {
        cos_theta: theta.cos(),
        sin_theta: theta.sin(),
        theta_dot: rng.random_range(-8.0..8.0),
    }
}

pub fn random_batch(seed: u64, n: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions: Vec<Transition> = (0..n)
        .map(|_| Transition {
            state: random_obs(&mut rng),
            action: Action::new(rng.random_range(-MAX_TORQUE..MAX_TORQUE)),
            reward: rng.random_range(-16.0..0.0),
            next_state: random_obs(&mut rng),
        })
        .collect();
    Batch::from_transitions(&transitions)
}

/// `sum(net(input) .* weights)` via forward passes only.
pub fn weighted_output(net: &Mlp, input: &Matrix, weights: &Matrix) -> f64 {
    let (out, _) = net.forward_batch(input).unwrap();
    out.as_slice().iter().zip(weights.as_slice()).map(|(o, w)| o * w).sum()
}

/// Central difference of `objective` with respect to flat parameter `idx`.
pub fn central_difference(net: &Mlp, idx: usize, h: f64, objective: impl Fn(&Mlp) -> f64) -> f64 {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut p = base.clone();
    p[idx] = base[idx] + h;
    probe.set_flat_params(&p).unwrap();
    let up = objective(&probe);
    p[idx] = base[idx] - h;
    probe.set_flat_params(&p).unwrap();
    let down = objective(&probe);
    (up - down) / (2.0 * h)
}

/// Surrogate actor loss `-mean Q(s, mu(s))` evaluated with forward passes only.
pub fn surrogate_actor_loss(actor: &Mlp, critic: &Mlp, batch: &Batch) -> f64 {
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let s = batch.states.row(i);
        let a = MAX_TORQUE * actor.forward(s).unwrap().0[0];
        let mut x = s.to_vec();
        x.push(a);
        assert_eq!(x.len(), CRITIC_INPUT_DIM);
        total += critic.forward(&x).unwrap().0[0];
    }
    -total / n as f64
}

pub fn sample_coords(rng: &mut ChaCha8Rng, count: usize, n_params: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..n_params)).collect()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Scalar parameters of a network whose every layer has one unit.
struct Chain {
    w1: Vec<f64>,
    b1: f64,
    w2: f64,
    b2: f64,
    w3: f64,
    b3: f64,
}

fn chain(net: &Mlp) -> Chain {
    let l = net.layers();
    assert_eq!(l.len(), 3);
    assert!(l.iter().all(|x| x.out_dim() == 1));
    Chain {
        w1: l[0].weights.clone(),
        b1: l[0].bias[0],
        w2: l[1].weights[0],
        b2: l[1].bias[0],
        w3: l[2].weights[0],
        b3: l[2].bias[0],
    }
}

/// Explicit policy-gradient product for an agent whose actor is
/// `3 -> 1 (relu) -> 1 (relu) -> 1 (tanh)` and whose critic is
/// `4 -> 1 (relu) -> 1 (relu) -> 1 (linear)`:
/// `-(1/N) sum_i dQ/da(s_i, mu(s_i)) * dmu/dtheta(s_i)`, in flat parameter order.
pub fn chain_rule_actor_gradient(agent: &DdpgAgent, batch: &Batch) -> Vec<f64> {
    let a = chain(&agent.actor);
    let c = chain(&agent.critic);
    let n = batch.len();
    let mut grad = vec![0.0; 8];
    for i in 0..n {
        let s = batch.states.row(i);
        // actor forward by hand
        let z1 = a.w1.iter().zip(s).map(|(w, x)| w * x).sum::<f64>() + a.b1;
        let h1 = relu(z1);
        let z2 = a.w2 * h1 + a.b2;
        let h2 = relu(z2);
        let z3 = a.w3 * h2 + a.b3;
        let mu = MAX_TORQUE * z3.tanh();

        // dmu/dtheta
        let dz3 = MAX_TORQUE * (1.0 - z3.tanh().powi(2));
        let dz2 = dz3 * a.w3 * step(z2);
        let dz1 = dz2 * a.w2 * step(z1);
        let mut dmu = Vec::with_capacity(8);
        dmu.extend(s.iter().map(|x| dz1 * x));
        dmu.push(dz1);
        dmu.push(dz2 * h1);
        dmu.push(dz2);
        dmu.push(dz3 * h2);
        dmu.push(dz3);

        // dQ/da at a = mu(s)
        let x: Vec<f64> = s.iter().copied().chain(std::iter::once(mu)).collect();
        let y1 = c.w1.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + c.b1;
        let y2 = c.w2 * relu(y1) + c.b2;
        let dq_da = c.w3 * step(y2) * c.w2 * step(y1) * c.w1[3];

        for (g, d) in grad.iter_mut().zip(dmu) {
            *g -= dq_da * d / n as f64;
        }
    }
    grad
}
