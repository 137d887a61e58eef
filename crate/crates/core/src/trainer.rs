//! Training and evaluation harness.
//!
//! One iteration is one environment step with the noisy policy followed by
//! one gradient step. Episodes run across iteration boundaries and are reset
//! (together with the exploration noise) whenever they truncate.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, CriticLoss, DdpgAgent, LossReport};
use crate::env::{Action, EnvParams, Observation, Pendulum, PendulumState, MAX_TORQUE};
use crate::error::{Error, Result};
use crate::fmt_real;
use crate::noise::OuProcess;
use crate::replay::{ReplayBuffer, Transition};

pub const METRICS_HEADER: &str = "iteration,critic_loss,actor_loss,total_loss,average_return";
pub const METRICS_FILE: &str = "metrics.csv";

// Distinct ChaCha streams drawn from the one run seed.
const INIT_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const REPLAY_STREAM: u64 = 3;
const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub collect_steps_per_iteration: u64,
    pub gamma: f64,
    pub tau: f64,
    pub update_period_c: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub critic_loss_kind: CriticLoss,
    pub loss_log_every: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub env: EnvParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            batch_size: 32,
            buffer_capacity: 100_000,
            warmup_steps: 1_000,
            collect_steps_per_iteration: 1,
            gamma: 0.99,
            tau: 0.05,
            update_period_c: 5,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            ou_theta: 0.15,
            ou_sigma: 0.3,
            critic_loss_kind: CriticLoss::Mae,
            loss_log_every: 20,
            eval_every: 1_000,
            eval_episodes: 10,
            seed: 0,
            output_dir: None,
            env: EnvParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("loss_log_every", self.loss_log_every),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes as u64),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.collect_steps_per_iteration != 1 {
            return Err(Error::InvalidConfig(
                "exactly one collect step per iteration is supported".into(),
            ));
        }
        self.env.validate()?;
        self.agent_config().validate()?;
        OuProcess::new(self.ou_theta, self.ou_sigma, 0.0, 1.0)?;
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            gamma: self.gamma,
            tau: self.tau,
            update_period: self.update_period_c,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            batch_size: self.batch_size,
            critic_loss: self.critic_loss_kind,
            ..AgentConfig::default()
        }
    }

    /// Seed of the evaluation episodes; fixed for the whole run.
    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(EVAL_SEED_OFFSET)
    }
}

/// One line of the metrics file. Loss columns are present on loss-log
/// iterations, `average_return` on evaluation iterations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub iteration: u64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub total_loss: Option<f64>,
    pub average_return: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.iteration,
            cell(self.critic_loss),
            cell(self.actor_loss),
            cell(self.total_loss),
            cell(self.average_return)
        )
    }

    fn with_losses(mut self, report: &LossReport) -> Self {
        self.critic_loss = Some(report.critic_loss);
        self.actor_loss = Some(report.actor_loss);
        self.total_loss = Some(report.total_loss);
        self
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::MalformedMetrics {
                line: 1,
                reason: format!("expected header '{METRICS_HEADER}'"),
            })
        }
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedMetrics { line: idx + 1, reason };
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 5 {
            return Err(bad(format!("expected 5 cells, found {}", cells.len())));
        }
        let real = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad number '{s}'")))
            }
        };
        let row = MetricsRow {
            iteration: cells[0]
                .parse()
                .map_err(|_| bad(format!("bad iteration '{}'", cells[0])))?,
            critic_loss: real(cells[1])?,
            actor_loss: real(cells[2])?,
            total_loss: real(cells[3])?,
            average_return: real(cells[4])?,
        };
        if rows.last().is_some_and(|prev| prev.iteration >= row.iteration) {
            return Err(bad("iterations must increase".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_metrics(&text)
}

/// Appends metrics rows to a file, flushing after every row.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        let file = File::create(path).map_err(Error::io(path))?;
        let mut writer = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        writer.write_line(METRICS_HEADER)?;
        Ok(writer)
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.write_line(&row.to_csv())
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(Error::io(&self.path))
    }
}

/// Mean undiscounted return of `n_episodes` full episodes under the
/// deterministic policy (no exploration noise).
pub fn evaluate(agent: &DdpgAgent, env_params: &EnvParams, n_episodes: usize, seed: u64) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be at least 1".into()));
    }
    let env = Pendulum::new(*env_params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let (state, _) = env.reset(&mut rng);
        total += episode_return(agent, &env, state)?;
    }
    Ok(total / n_episodes as f64)
}

/// Undiscounted return of one deterministic episode from `start`.
pub fn episode_return(agent: &DdpgAgent, env: &Pendulum, start: PendulumState) -> Result<f64> {
    let mut state = start;
    let mut total = 0.0;
    loop {
        let action = Action::new(agent.policy(&state.observation())).clipped();
        let out = env.step(&state, action)?;
        total += out.reward;
        state = out.state;
        if out.truncated {
            return Ok(total);
        }
    }
}

/// The independent random streams of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStreams {
    pub env: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub replay: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            env: stream(seed, ENV_STREAM),
            noise: stream(seed, NOISE_STREAM),
            replay: stream(seed, REPLAY_STREAM),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A resumable training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub agent: DdpgAgent,
    pub buffer: ReplayBuffer,
    pub noise: OuProcess,
    pub env_state: PendulumState,
    pub rngs: RngStreams,
    /// Completed iterations.
    pub iteration: u64,
    pub warmed_up: bool,
    env: Pendulum,
}

/// Final state of a run and every metrics row it produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub history: Vec<MetricsRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = Pendulum::new(config.env)?;
        let agent = DdpgAgent::new(config.agent_config(), &mut stream(config.seed, INIT_STREAM))?;
        let mut rngs = RngStreams::from_seed(config.seed);
        let (env_state, _) = env.reset(&mut rngs.env);
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            noise: OuProcess::new(config.ou_theta, config.ou_sigma, 0.0, 1.0)?,
            agent,
            env_state,
            rngs,
            iteration: 0,
            warmed_up: false,
            env,
            config,
        })
    }

    /// Reassembles a trainer from restored parts with an empty replay buffer.
    pub(crate) fn restore(
        config: TrainConfig,
        agent: DdpgAgent,
        noise: OuProcess,
        env_state: PendulumState,
        rngs: RngStreams,
        iteration: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            env: Pendulum::new(config.env)?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            noise,
            agent,
            env_state,
            rngs,
            iteration,
            warmed_up: true,
            config,
        })
    }

    pub fn env(&self) -> &Pendulum {
        &self.env
    }

    /// Applies one environment transition and stores it.
    fn collect(&mut self, action: Action) -> Result<()> {
        let obs: Observation = self.env_state.observation();
        let out = self.env.step(&self.env_state, action)?;
        self.buffer.push(Transition {
            state: obs,
            action: action.clipped(),
            reward: out.reward,
            next_state: out.observation,
        });
        if out.truncated {
            self.env_state = self.env.reset(&mut self.rngs.env).0;
            self.noise.reset();
        } else {
            self.env_state = out.state;
        }
        Ok(())
    }

    /// Fills the buffer with uniform-random actions. Runs once per fresh run.
    pub fn warmup(&mut self) -> Result<()> {
        if self.warmed_up {
            return Ok(());
        }
        for _ in 0..self.config.warmup_steps {
            let torque = self.rngs.noise.random_range(-MAX_TORQUE..=MAX_TORQUE);
            self.collect(Action::new(torque))?;
        }
        self.warmed_up = true;
        Ok(())
    }

    /// One collect step and, once the buffer holds a full batch, one train step.
    pub fn iterate(&mut self) -> Result<Option<LossReport>> {
        let obs = self.env_state.observation();
        let action = self
            .agent
            .select_action(&obs, Some(&mut self.noise), &mut self.rngs.noise);
        self.collect(action)?;
        let report = if self.buffer.len() >= self.config.batch_size {
            Some(self.agent.train_step(&self.buffer, &mut self.rngs.replay)?)
        } else {
            None
        };
        self.iteration += 1;
        Ok(report)
    }

    /// Runs until `self.iteration == until`, logging at the configured cadence.
    pub fn run_until(&mut self, until: u64, mut sink: Option<&mut MetricsWriter>) -> Result<Vec<MetricsRow>> {
        let mut history = Vec::new();
        if self.iteration >= until {
            return Ok(history);
        }
        self.warmup()?;
        while self.iteration < until {
            let report = match self.iterate() {
                Ok(r) => r,
                Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                    let diagnostic = MetricsRow {
                        iteration: self.iteration + 1,
                        critic_loss: Some(f64::NAN),
                        actor_loss: Some(f64::NAN),
                        total_loss: Some(f64::NAN),
                        average_return: None,
                    };
                    if let Some(w) = sink.as_deref_mut() {
                        w.write(&diagnostic)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let it = self.iteration;
            let mut row = MetricsRow {
                iteration: it,
                ..MetricsRow::default()
            };
            let mut emit = false;
            if it.is_multiple_of(self.config.loss_log_every) {
                if let Some(report) = &report {
                    row = row.with_losses(report);
                    emit = true;
                }
            }
            if it.is_multiple_of(self.config.eval_every) {
                let ret = evaluate(
                    &self.agent,
                    &self.config.env,
                    self.config.eval_episodes,
                    self.config.eval_seed(),
                )?;
                log::info!("iteration {it}: average return {ret:.2}");
                row.average_return = Some(ret);
                emit = true;
            }
            if emit {
                if let Some(w) = sink.as_deref_mut() {
                    w.write(&row)?;
                }
                history.push(row);
            }
        }
        Ok(history)
    }
}

/// Runs a fresh training job. Metrics stream to `output_dir/metrics.csv`
/// when an output directory is configured.
pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let mut writer = match &trainer.config.output_dir {
        Some(dir) => Some(MetricsWriter::create(&dir.join(METRICS_FILE))?),
        None => None,
    };
    let until = trainer.config.iterations;
    let history = trainer.run_until(until, writer.as_mut())?;
    Ok(TrainOutcome { trainer, history })
}
