//! SVG charts for metrics and trajectories, plus trajectory rendering.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::DdpgAgent;
use crate::env::{normalize_angle, write_trajectory, Action, EnvParams, Pendulum, PendulumState, TrajectoryRow};
use crate::error::{Error, Result};
use crate::trainer::{read_metrics, MetricsRow};

/// Loss values at or above this are dropped from the filtered loss chart.
pub const LOSS_FILTER_THRESHOLD: f64 = 5.0;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

/// A single-series line chart rendered as a standalone SVG document.
#[derive(Debug, Clone)]
pub struct LineChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LineChart<'_> {
    pub fn to_svg(&self) -> String {
        let finite: Vec<(f64, f64)> = self
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (x0, x1) = range(finite.iter().map(|p| p.0));
        let (y0, y1) = range(finite.iter().map(|p| p.1));
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(self.title)
        );
        let bottom = MARGIN_TOP + plot_h;
        let right = MARGIN_LEFT + plot_w;
        let _ = writeln!(
            svg,
            r#"<path d="M{MARGIN_LEFT:.1},{MARGIN_TOP:.1} L{MARGIN_LEFT:.1},{bottom:.1} L{right:.1},{bottom:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..TICKS {
            let f = i as f64 / (TICKS - 1) as f64;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                bottom + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                sy(yv) + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 10.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(self.y_label)
        );
        if !finite.is_empty() {
            let coords: Vec<String> = finite
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
                coords.join(" ")
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// `(iteration, total_loss)` for logged rows with loss below `threshold`.
pub fn filter_loss(rows: &[MetricsRow], threshold: f64) -> Vec<(u64, f64)> {
    rows.iter()
        .filter_map(|r| r.total_loss.map(|l| (r.iteration, l)))
        .filter(|&(_, l)| l < threshold)
        .collect()
}

fn write_svg(path: &Path, chart: &LineChart) -> Result<()> {
    fs::write(path, chart.to_svg()).map_err(Error::io(path))
}

/// Writes `average_return.svg`, `total_loss.svg` and `total_loss_filtered.svg`.
pub fn export_plots(metrics_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(metrics_path)?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;

    let returns = rows
        .iter()
        .filter_map(|r| r.average_return.map(|v| (r.iteration as f64, v)))
        .collect();
    let losses = rows
        .iter()
        .filter_map(|r| r.total_loss.map(|v| (r.iteration as f64, v)))
        .collect();
    let filtered = filter_loss(&rows, LOSS_FILTER_THRESHOLD)
        .into_iter()
        .map(|(i, l)| (i as f64, l))
        .collect();

    let charts = [
        ("average_return.svg", "Average Return", "Average return", returns),
        ("total_loss.svg", "Training Loss", "Total loss", losses),
        (
            "total_loss_filtered.svg",
            "Training Loss (values below 5)",
            "Total loss",
            filtered,
        ),
    ];
    let mut written = Vec::new();
    for (file, title, y_label, points) in charts {
        let path = out_dir.join(file);
        write_svg(
            &path,
            &LineChart {
                title,
                x_label: "Iteration",
                y_label,
                points,
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

/// One deterministic episode from `start`, one row per step.
pub fn rollout(agent: &DdpgAgent, env: &Pendulum, start: PendulumState) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::with_capacity(env.params().episode_length);
    let mut state = start;
    loop {
        let action = Action::new(agent.policy(&state.observation())).clipped();
        let out = env.step(&state, action)?;
        rows.push(TrajectoryRow {
            step: state.step_index,
            theta: state.theta,
            theta_dot: state.theta_dot,
            torque: action.torque,
            reward: out.reward,
        });
        if out.truncated {
            return Ok(rows);
        }
        state = out.state;
    }
}

/// Runs one deterministic episode from a seeded random start and writes the
/// trajectory to `path`. With `chart`, an angle-vs-step SVG is written next
/// to it.
pub fn render_trajectory(
    agent: &DdpgAgent,
    env_params: &EnvParams,
    seed: u64,
    path: &Path,
    chart: bool,
) -> Result<Vec<TrajectoryRow>> {
    let env = Pendulum::new(*env_params)?;
    let (start, _) = env.reset(&mut ChaCha8Rng::seed_from_u64(seed));
    let rows = rollout(agent, &env, start)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    write_trajectory(BufWriter::new(file), &rows).map_err(Error::io(path))?;
    if chart {
        let points = rows
            .iter()
            .map(|r| (r.step as f64, normalize_angle(r.theta)))
            .collect();
        write_svg(
            &path.with_extension("svg"),
            &LineChart {
                title: "Pendulum angle",
                x_label: "Step",
                y_label: "Angle (rad, 0 = upright)",
                points,
            },
        )?;
    }
    Ok(rows)
}
