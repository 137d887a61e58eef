use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use swingup::ablation::{run_ablation, Variant};
use swingup::agent::CriticLoss;
use swingup::checkpoint::{load_checkpoint, save_checkpoint};
use swingup::env::EnvParams;
use swingup::plot::{export_plots, render_trajectory};
use swingup::trainer::{evaluate, MetricsWriter, TrainConfig, Trainer, METRICS_FILE};

const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Parser)]
#[command(name = "swingup", version, about = "DDPG on the pendulum swing-up task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent; writes metrics.csv and checkpoint.bin to --output-dir.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "run")]
        output_dir: PathBuf,
        /// Continue from a checkpoint instead of starting fresh. Training
        /// hyperparameters then come from the checkpoint; --iterations sets
        /// the new total.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Average return of a checkpointed policy over fresh episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Start-state seed; defaults to the run's evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one run per variant and summarise them.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated: mae, mse, huber, batch=N, period=N.
        #[arg(long, value_delimiter = ',', default_value = "mae,mse,huber")]
        variants: Vec<String>,
        #[arg(long, default_value = "ablation")]
        output_dir: PathBuf,
    },
    /// Roll out a checkpointed policy and write its trajectory CSV.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write an angle chart next to the CSV.
        #[arg(long)]
        svg: bool,
    },
    /// Turn a metrics file into SVG charts.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        output_dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 100_000)]
    iterations: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 100_000)]
    buffer_capacity: usize,
    #[arg(long, default_value_t = 1_000)]
    warmup_steps: u64,
    #[arg(long, default_value_t = 1)]
    collect_steps_per_iteration: u64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Train steps between target-network updates.
    #[arg(long, default_value_t = 5)]
    update_period_c: u64,
    #[arg(long, default_value_t = 1e-4)]
    actor_lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    critic_lr: f64,
    #[arg(long, default_value_t = 0.15)]
    ou_theta: f64,
    #[arg(long, default_value_t = 0.3)]
    ou_sigma: f64,
    /// mae, mse or huber.
    #[arg(long, default_value = "mae")]
    critic_loss_kind: CriticLoss,
    #[arg(long, default_value_t = 20)]
    loss_log_every: u64,
    #[arg(long, default_value_t = 1_000)]
    eval_every: u64,
    #[arg(long, default_value_t = 10)]
    eval_episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    gravity: f64,
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 200)]
    episode_length: usize,
}

impl ConfigArgs {
    fn to_config(&self, output_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            warmup_steps: self.warmup_steps,
            collect_steps_per_iteration: self.collect_steps_per_iteration,
            gamma: self.gamma,
            tau: self.tau,
            update_period_c: self.update_period_c,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            ou_theta: self.ou_theta,
            ou_sigma: self.ou_sigma,
            critic_loss_kind: self.critic_loss_kind,
            loss_log_every: self.loss_log_every,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            seed: self.seed,
            output_dir,
            env: EnvParams {
                gravity: self.gravity,
                mass: self.mass,
                length: self.length,
                dt: self.dt,
                episode_length: self.episode_length,
            },
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, output_dir, resume } => {
            let mut trainer = match resume {
                Some(path) => {
                    let ckpt = load_checkpoint(&path)
                        .with_context(|| format!("loading checkpoint {}", path.display()))?;
                    let mut trainer = ckpt.into_trainer()?;
                    if config.iterations < trainer.iteration {
                        bail!(
                            "--iterations {} is behind the checkpoint (iteration {})",
                            config.iterations,
                            trainer.iteration
                        );
                    }
                    trainer.config.iterations = config.iterations;
                    trainer.config.output_dir = Some(output_dir.clone());
                    trainer
                }
                None => Trainer::new(config.to_config(Some(output_dir.clone())))?,
            };
            std::fs::create_dir_all(&output_dir)
                .with_context(|| format!("creating {}", output_dir.display()))?;
            let metrics = output_dir.join(METRICS_FILE);
            let mut writer = MetricsWriter::create(&metrics)?;
            let started = Instant::now();
            let until = trainer.config.iterations;
            let history = trainer.run_until(until, Some(&mut writer))?;
            let ckpt = output_dir.join(CHECKPOINT_FILE);
            save_checkpoint(&trainer, &ckpt)?;
            let last_return = history.iter().rev().find_map(|r| r.average_return);
            println!(
                "trained to iteration {} in {:.1}s; metrics: {}; checkpoint: {}",
                trainer.iteration,
                started.elapsed().as_secs_f64(),
                metrics.display(),
                ckpt.display()
            );
            if let Some(r) = last_return {
                println!("last average return: {r:.3}");
            }
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let seed = seed.unwrap_or_else(|| ckpt.config.eval_seed());
            let ret = evaluate(&ckpt.agent, &ckpt.config.env, episodes, seed)?;
            println!("{}", swingup::fmt_real(ret));
        }
        Command::Ablate { config, variants, output_dir } => {
            let variants = variants
                .iter()
                .map(|v| v.parse::<Variant>())
                .collect::<Result<Vec<_>, _>>()?;
            let report = run_ablation(&config.to_config(None), &variants, &output_dir)?;
            for row in &report.rows {
                let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:>12}  return {:>10}  late loss {:>10}",
                    row.variant,
                    fmt(row.final_average_return),
                    fmt(row.median_late_total_loss)
                );
            }
            println!("summary: {}", report.summary_path.display());
        }
        Command::Render { checkpoint, out, seed, svg } => {
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let rows = render_trajectory(&ckpt.agent, &ckpt.config.env, seed, &out, svg)?;
            let total: f64 = rows.iter().map(|r| r.reward).sum();
            println!("wrote {} steps to {} (return {total:.3})", rows.len(), out.display());
        }
        Command::Plot { metrics, output_dir } => {
            for path in export_plots(&metrics, &output_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
