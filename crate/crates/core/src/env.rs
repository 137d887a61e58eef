//! Pendulum swing-up dynamics.
//!
//! The pendulum is a rigid rod of length `l` and mass `m` hinged at one end.
//! `theta = 0` is the (unstable) upright position. The agent sees
//! `(cos theta, sin theta, theta_dot)` and applies a bounded joint torque.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_real;

/// Maximum angular speed in rad/s.
pub const MAX_SPEED: f64 = 8.0;
/// Maximum joint effort in N·m.
pub const MAX_TORQUE: f64 = 2.0;

/// Lowest reward any transition can produce: `-(pi^2 + 0.1 * 8^2 + 0.001 * 2^2)`.
pub const MIN_REWARD: f64 = -(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub episode_length: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            episode_length: 200,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let constants = [
            ("gravity", self.gravity),
            ("mass", self.mass),
            ("length", self.length),
            ("dt", self.dt),
        ];
        for (name, value) in constants {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.episode_length == 0 {
            return Err(Error::InvalidConfig("episode_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Internal physical state. `theta` is not wrapped during integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
    pub step_index: usize,
}

impl PendulumState {
    /// A fresh episode state at the given angle and velocity.
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self {
            theta,
            theta_dot,
            step_index: 0,
        }
    }

    pub fn observation(&self) -> Observation {
        Observation {
            cos_theta: self.theta.cos(),
            sin_theta: self.theta.sin(),
            theta_dot: self.theta_dot,
        }
    }
}

/// What the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cos_theta: f64,
    pub sin_theta: f64,
    pub theta_dot: f64,
}

impl Observation {
    pub const DIM: usize = 3;

    pub fn to_array(self) -> [f64; 3] {
        [self.cos_theta, self.sin_theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Joint effort. Values outside `[-MAX_TORQUE, MAX_TORQUE]` are clipped when applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub torque: f64,
}

impl Action {
    pub const DIM: usize = 1;

    pub fn new(torque: f64) -> Self {
        Self { torque }
    }

    pub fn clipped(self) -> Self {
        Self {
            torque: self.torque.clamp(-MAX_TORQUE, MAX_TORQUE),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PendulumState,
    pub observation: Observation,
    pub reward: f64,
    /// The episode hit its step limit. There is no other termination.
    pub truncated: bool,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut wrapped = (theta + PI).rem_euclid(two_pi);
    // rem_euclid may round up to exactly 2*pi for tiny negative inputs.
    if wrapped >= two_pi {
        wrapped -= two_pi;
    }
    wrapped - PI
}

/// Cost-of-deviation reward: angle, angular velocity and effort are all penalised.
pub fn reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
    let angle = normalize_angle(theta);
    -(angle * angle + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
}

/// Stateless pendulum dynamics; episode state is carried in [`PendulumState`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct Pendulum {
    params: EnvParams,
}


impl Pendulum {
    pub fn new(params: EnvParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    /// Starts an episode with `theta ~ U(-pi, pi)` and `theta_dot ~ U(-1, 1)`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (PendulumState, Observation) {
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        let state = PendulumState::new(theta, theta_dot);
        (state, state.observation())
    }

    /// Advances one semi-implicit Euler step. The reward is computed from the
    /// pre-step angle and velocity together with the clipped torque.
    pub fn step(&self, state: &PendulumState, action: Action) -> Result<StepOutcome> {
        let p = &self.params;
        if state.step_index >= p.episode_length {
            return Err(Error::EpisodeFinished {
                steps: state.step_index,
            });
        }
        let u = action.clipped().torque;
        let r = reward(state.theta, state.theta_dot, u);

        let accel = 3.0 * p.gravity / (2.0 * p.length) * state.theta.sin()
            + 3.0 / (p.mass * p.length * p.length) * u;
        let theta_dot = (state.theta_dot + accel * p.dt).clamp(-MAX_SPEED, MAX_SPEED);
        let theta = state.theta + theta_dot * p.dt;
        let step_index = state.step_index + 1;

        let next = PendulumState {
            theta,
            theta_dot,
            step_index,
        };
        Ok(StepOutcome {
            state: next,
            observation: next.observation(),
            reward: r,
            truncated: step_index == p.episode_length,
        })
    }
}

/// One exported step: the state the torque was applied in, the clipped
/// torque and the resulting reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub theta: f64,
    pub theta_dot: f64,
    pub torque: f64,
    pub reward: f64,
}

pub const TRAJECTORY_HEADER: &str = "step,theta,theta_dot,torque,reward";

pub fn write_trajectory<W: Write>(mut out: W, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.step,
            fmt_real(row.theta),
            fmt_real(row.theta_dot),
            fmt_real(row.torque),
            fmt_real(row.reward)
        )?;
    }
    Ok(())
}

/// Parses a trajectory written by [`write_trajectory`].
pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(Error::MalformedMetrics {
                line: 1,
                reason: "missing trajectory header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::MalformedMetrics {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let real = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
        rows.push(TrajectoryRow {
            step: fields[0].trim().parse().map_err(|_| bad("bad step"))?,
            theta: real(fields[1])?,
            theta_dot: real(fields[2])?,
            torque: real(fields[3])?,
            reward: real(fields[4])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_obs(obs: Observation, expected: [f64; 3]) {
        for (a, b) in obs.to_array().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn forced_start_observations() {
        assert_obs(PendulumState::new(0.0, 0.0).observation(), [1.0, 0.0, 0.0]);
        assert_obs(PendulumState::new(PI, 0.0).observation(), [-1.0, 0.0, 0.0]);
        assert_obs(PendulumState::new(PI / 2.0, 0.5).observation(), [0.0, 1.0, 0.5]);
    }

    #[test]
    fn reset_draws_within_ranges_and_is_seeded() {
        let env = Pendulum::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut again = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let (state, obs) = env.reset(&mut rng);
            assert!((-PI..PI).contains(&state.theta));
            assert!((-1.0..1.0).contains(&state.theta_dot));
            assert_eq!(state.step_index, 0);
            assert_eq!(obs, state.observation());
            assert_eq!(env.reset(&mut again).0, state);
        }
    }

    #[test]
    fn upright_equilibrium_is_fixed() {
        let env = Pendulum::default();
        let out = env.step(&PendulumState::new(0.0, 0.0), Action::new(0.0)).unwrap();
        assert_eq!(out.state.theta, 0.0);
        assert_eq!(out.state.theta_dot, 0.0);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.state.step_index, 1);
        assert!(!out.truncated);
    }

    #[test]
    fn one_euler_step_from_horizontal() {
        let env = Pendulum::default();
        let out = env
            .step(&PendulumState::new(PI / 2.0, 0.0), Action::new(0.0))
            .unwrap();
        // 1.5 * 10 * sin(pi/2) * 0.05 = 0.75; pi/2 + 0.75 * 0.05
        assert_abs_diff_eq!(out.state.theta_dot, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(out.state.theta, PI / 2.0 + 0.0375, epsilon = 1e-12);
        assert_abs_diff_eq!(out.state.theta, 1.6083, epsilon = 1e-4);
    }

    #[test]
    fn torque_is_clipped() {
        let env = Pendulum::default();
        let s = PendulumState::new(PI, 0.0);
        let a = env.step(&s, Action::new(3.0)).unwrap();
        let b = env.step(&s, Action::new(2.0)).unwrap();
        assert_eq!(a, b);
        let c = env.step(&s, Action::new(-7.5)).unwrap();
        let d = env.step(&s, Action::new(-2.0)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn velocity_is_clipped() {
        let env = Pendulum::default();
        let out = env
            .step(&PendulumState::new(PI / 2.0, 7.9), Action::new(2.0))
            .unwrap();
        assert_eq!(out.state.theta_dot, MAX_SPEED);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(0.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(reward(PI, 0.0, 0.0), -PI * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(reward(PI, 0.0, 0.0), -9.8696, epsilon = 5e-5);
        assert_abs_diff_eq!(reward(0.0, 1.0, 0.0), -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(MIN_REWARD, -16.2736, epsilon = 5e-5);
    }

    #[test]
    fn normalize_angle_examples() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert_abs_diff_eq!(normalize_angle(1.5 * PI), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-3.0 * PI), -PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(PI), -PI, epsilon = 1e-12);
    }

    #[test]
    fn truncates_at_episode_length_and_then_errors() {
        let env = Pendulum::new(EnvParams {
            episode_length: 3,
            ..EnvParams::default()
        })
        .unwrap();
        let mut state = PendulumState::new(1.0, 0.0);
        for i in 1..=3 {
            let out = env.step(&state, Action::new(0.5)).unwrap();
            assert_eq!(out.truncated, i == 3);
            state = out.state;
        }
        assert!(matches!(
            env.step(&state, Action::new(0.0)),
            Err(Error::EpisodeFinished { steps: 3 })
        ));
    }

    #[test]
    fn rejects_bad_params() {
        for bad in [
            EnvParams { gravity: 0.0, ..EnvParams::default() },
            EnvParams { mass: -1.0, ..EnvParams::default() },
            EnvParams { dt: f64::NAN, ..EnvParams::default() },
            EnvParams { episode_length: 0, ..EnvParams::default() },
        ] {
            assert!(matches!(Pendulum::new(bad), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn trajectory_round_trips() {
        let rows = vec![
            TrajectoryRow { step: 0, theta: PI, theta_dot: -0.25, torque: 2.0, reward: -9.9 },
            TrajectoryRow { step: 1, theta: 1.0 / 3.0, theta_dot: 1e-300, torque: -2.0, reward: 0.0 },
        ];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,theta,theta_dot,torque,reward\n"));
        assert_eq!(read_trajectory(&text).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn normalize_angle_lands_in_half_open_range(theta in -1e6f64..1e6) {
            let w = normalize_angle(theta);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert!(((theta - w) / (2.0 * PI)).fract().abs() < 1e-6
                || (1.0 - ((theta - w) / (2.0 * PI)).fract().abs()) < 1e-6);
        }

        #[test]
        fn reward_is_bounded(theta in -50.0f64..50.0, theta_dot in -MAX_SPEED..MAX_SPEED, u in -10.0f64..10.0) {
            let r = reward(theta, theta_dot, u.clamp(-MAX_TORQUE, MAX_TORQUE));
            prop_assert!((MIN_REWARD..=0.0).contains(&r));
        }

        #[test]
        fn zero_torque_trajectories_mirror(theta in -PI..PI, theta_dot in -1.0f64..1.0) {
            let env = Pendulum::default();
            let mut a = PendulumState::new(theta, theta_dot);
            let mut b = PendulumState::new(-theta, -theta_dot);
            for _ in 0..200 {
                let oa = env.step(&a, Action::new(0.0)).unwrap();
                let ob = env.step(&b, Action::new(0.0)).unwrap();
                prop_assert!((oa.state.theta + ob.state.theta).abs() < 1e-9);
                prop_assert!((oa.state.theta_dot + ob.state.theta_dot).abs() < 1e-9);
                prop_assert!((oa.reward - ob.reward).abs() < 1e-9);
                a = oa.state;
                b = ob.state;
            }
        }
    }
}
