use std::fs;
use swingup::ablation::{run_ablation, Variant, SUMMARY_HEADER};
use swingup::trainer::{read_metrics, TrainConfig};
use tempfile::tempdir;

#[test]
fn loss_variants_each_get_a_run_and_a_summary_row() {
    let dir = tempdir().unwrap();
    let base = TrainConfig {
        iterations: 100,
        warmup_steps: 100,
        eval_every: 100,
        eval_episodes: 1,
        ..TrainConfig::default()
    };
    let variants: Vec<Variant> = ["mae", "mse", "huber"].iter().map(|s| s.parse().unwrap()).collect();
    let report = run_ablation(&base, &variants, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 3);
    let summary = fs::read_to_string(&report.summary_path).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some(SUMMARY_HEADER));
    for (row, line) in report.rows.iter().zip(lines) {
        assert!(line.starts_with(&format!("{},", row.variant)));
        assert!(row.final_average_return.is_some());
        assert!(row.median_late_total_loss.is_some());
        assert_eq!(read_metrics(&row.metrics_path).unwrap().last().unwrap().iteration, 100);
    }
    // Different losses must actually change training.
    assert_ne!(report.rows[0].median_late_total_loss, report.rows[1].median_late_total_loss);
}

#[test]
fn duplicate_variants_are_rejected_before_running() {
    let dir = tempdir().unwrap();
    let variants: Vec<Variant> = ["mse", "mse"].iter().map(|s| s.parse().unwrap()).collect();
    assert!(run_ablation(&TrainConfig::default(), &variants, dir.path()).is_err());
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}
