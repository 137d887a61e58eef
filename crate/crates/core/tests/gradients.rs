//! Backprop against finite differences and the explicit policy-gradient product.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swingup::agent::{AgentConfig, DdpgAgent};
use swingup::nn::{init_network, Activation, Layer, Matrix, Mlp};

fn check_network(net: &Mlp, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 4;
    let input = Matrix::from_vec(
        batch,
        net.input_dim(),
        (0..batch * net.input_dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect(),
    )
    .unwrap();
    let weights = Matrix::from_vec(batch, 1, vec![1.0, -0.5, 0.75, 2.0]).unwrap();
    let (_, cache) = net.forward_batch(&input).unwrap();
    let analytic = net.backward(&cache, &weights).unwrap().0.flatten();
    for idx in sample_coords(&mut rng, 100, net.param_count()) {
        let numeric = central_difference(net, idx, FD_STEP, |n| weighted_output(n, &input, &weights));
        let err = relative_error(analytic[idx], numeric);
        assert!(err < FD_TOLERANCE, "param {idx}: backprop {} vs fd {numeric} (rel {err})", analytic[idx]);
    }
}

#[test]
fn actor_architecture_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let net = init_network(&mut rng, &[3, 400, 300, 1], &[Activation::Relu, Activation::Relu, Activation::Tanh], 3e-3).unwrap();
    check_network(&net, 1);
}

#[test]
fn critic_architecture_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let net = init_network(&mut rng, &[4, 400, 300, 1], &[Activation::Relu, Activation::Relu, Activation::Linear], 3e-3).unwrap();
    check_network(&net, 2);
}

#[test]
fn full_size_actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let agent = DdpgAgent::new(AgentConfig::default(), &mut rng).unwrap();
    let batch = random_batch(301, 8);
    let (loss, grads) = agent.actor_gradient(&batch).unwrap();
    assert!((loss - surrogate_actor_loss(&agent.actor, &agent.critic, &batch)).abs() < 1e-12);
    let analytic = grads.flatten();
    for idx in sample_coords(&mut rng, 100, agent.actor.param_count()) {
        let numeric = central_difference(&agent.actor, idx, FD_STEP, |a| {
            surrogate_actor_loss(a, &agent.critic, &batch)
        });
        let err = relative_error(analytic[idx], numeric);
        assert!(err < FD_TOLERANCE, "param {idx}: {} vs {numeric} (rel {err})", analytic[idx]);
    }
}

fn unit_chain(w1: Vec<f64>, b1: f64, w2: f64, b2: f64, w3: f64, b3: f64, out: Activation) -> Mlp {
    let n = w1.len();
    Mlp::from_layers(vec![
        Layer::new(n, 1, w1, vec![b1], Activation::Relu).unwrap(),
        Layer::new(1, 1, vec![w2], vec![b2], Activation::Relu).unwrap(),
        Layer::new(1, 1, vec![w3], vec![b3], out).unwrap(),
    ])
    .unwrap()
}

#[test]
fn composite_actor_gradient_equals_chain_rule_product() {
    let actor = unit_chain(vec![0.4, -0.3, 0.05], 0.6, 0.8, 0.1, 0.7, -0.2, Activation::Tanh);
    let critic = unit_chain(vec![0.2, 0.5, -0.1, 0.9], 0.7, 1.2, 0.3, -0.6, 0.05, Activation::Linear);
    let config = AgentConfig {
        hidden_sizes: vec![1, 1],
        ..AgentConfig::default()
    };
    let agent = DdpgAgent::from_networks(config, actor, critic).unwrap();
    for seed in 0..5 {
        let batch = random_batch(seed, 16);
        let backprop = agent.actor_gradient(&batch).unwrap().1.flatten();
        let explicit = chain_rule_actor_gradient(&agent, &batch);
        assert!(explicit.iter().any(|g| *g != 0.0));
        for (b, e) in backprop.iter().zip(&explicit) {
            assert!((b - e).abs() < 1e-10, "{b} vs {e}");
        }
    }
}
