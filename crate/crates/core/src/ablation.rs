//! Side-by-side runs that differ in one hyperparameter.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::CriticLoss;
use crate::error::{Error, Result};
use crate::fmt_real;
use crate::trainer::{train, MetricsRow, TrainConfig, METRICS_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "variant,final_average_return,median_late_total_loss";

/// Fraction of the run, counted from the end, that "late training" covers.
pub const LATE_FRACTION: f64 = 0.2;

/// The single setting a variant changes relative to the base config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Override {
    CriticLoss(CriticLoss),
    BatchSize(usize),
    UpdatePeriod(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub change: Override,
}

impl Variant {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut config = base.clone();
        match self.change {
            Override::CriticLoss(kind) => config.critic_loss_kind = kind,
            Override::BatchSize(n) => config.batch_size = n,
            Override::UpdatePeriod(c) => config.update_period_c = c,
        }
        config
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Accepts `mae`, `mse`, `huber`, `batch=<n>` and `period=<n>`.
impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let change = if let Some(n) = s.strip_prefix("batch=") {
            Override::BatchSize(
                n.parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad batch size in '{s}'")))?,
            )
        } else if let Some(n) = s.strip_prefix("period=") {
            Override::UpdatePeriod(
                n.parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad update period in '{s}'")))?,
            )
        } else {
            Override::CriticLoss(s.parse()?)
        };
        Ok(Self {
            name: s.to_string(),
            change,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub final_average_return: Option<f64>,
    pub median_late_total_loss: Option<f64>,
    pub metrics_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// Logged total losses from the final `LATE_FRACTION` of a run of `iterations`.
pub fn late_losses(history: &[MetricsRow], iterations: u64) -> Vec<f64> {
    let start = iterations as f64 * (1.0 - LATE_FRACTION);
    history
        .iter()
        .filter(|r| r.iteration as f64 > start)
        .filter_map(|r| r.total_loss)
        .collect()
}

/// Trains every variant with the base seed, writing `<out_dir>/<variant>/metrics.csv`
/// and `<out_dir>/summary.csv`. Variant names must be unique.
pub fn run_ablation(base: &TrainConfig, variants: &[Variant], out_dir: &Path) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one variant".into()));
    }
    let mut seen = HashSet::new();
    for v in variants {
        if !seen.insert(v.name.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate variant '{}'", v.name)));
        }
    }
    let configs: Vec<TrainConfig> = variants
        .iter()
        .map(|v| TrainConfig {
            output_dir: Some(out_dir.join(&v.name)),
            ..v.apply(base)
        })
        .collect();
    for config in &configs {
        config.validate()?;
    }

    let mut rows = Vec::with_capacity(variants.len());
    for (variant, config) in variants.iter().zip(configs) {
        log::info!("ablation variant {variant}");
        let iterations = config.iterations;
        let metrics_path = out_dir.join(&variant.name).join(METRICS_FILE);
        let outcome = train(config)?;
        rows.push(SummaryRow {
            variant: variant.name.clone(),
            final_average_return: outcome.history.iter().rev().find_map(|r| r.average_return),
            median_late_total_loss: median(&late_losses(&outcome.history, iterations)),
            metrics_path,
        });
    }

    let summary_path = out_dir.join(SUMMARY_FILE);
    let mut text = format!("{SUMMARY_HEADER}\n");
    for row in &rows {
        let cell = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{}\n",
            row.variant,
            cell(row.final_average_return),
            cell(row.median_late_total_loss)
        ));
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    fs::write(&summary_path, text).map_err(Error::io(&summary_path))?;
    Ok(AblationReport { rows, summary_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_variants() {
        let v: Variant = "huber".parse().unwrap();
        assert_eq!(v.change, Override::CriticLoss(CriticLoss::Huber));
        assert_eq!("batch=64".parse::<Variant>().unwrap().change, Override::BatchSize(64));
        assert_eq!("period=1000".parse::<Variant>().unwrap().change, Override::UpdatePeriod(1000));
        assert!("batch=x".parse::<Variant>().is_err());
        assert!("adam".parse::<Variant>().is_err());
    }

    #[test]
    fn apply_changes_one_field() {
        let base = TrainConfig::default();
        let c = "period=10".parse::<Variant>().unwrap().apply(&base);
        assert_eq!(c.update_period_c, 10);
        assert_eq!(TrainConfig { update_period_c: 5, ..c }, base);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn rejects_duplicates_and_empty_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let base = TrainConfig::default();
        let dup: Vec<Variant> = ["mae", "mse", "mae"].iter().map(|s| s.parse().unwrap()).collect();
        assert!(matches!(
            run_ablation(&base, &dup, dir.path()),
            Err(Error::InvalidConfig(_))
        ));
        assert!(run_ablation(&base, &[], dir.path()).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn late_losses_use_final_fifth() {
        let rows: Vec<MetricsRow> = (1..=10)
            .map(|i| MetricsRow {
                iteration: i * 10,
                total_loss: Some(i as f64),
                ..MetricsRow::default()
            })
            .collect();
        assert_eq!(late_losses(&rows, 100), vec![9.0, 10.0]);
    }
}
