//! A small supersample grid: train on one half of each pair, test on the
//! other, and report how the fairness gap shrinks with n.

use fairgen::harness::{self, ExperimentConfig};
use fairgen::trainer::Method;

fn main() -> fairgen::Result<()> {
    let cfg = ExperimentConfig {
        method: Method::DiffDp,
        n: vec![100, 400],
        m1: 3,
        m2: 4,
        epochs: 20,
        ..ExperimentConfig::default()
    };
    let data = cfg.load()?;
    let report = harness::run_gap_experiment(&cfg, &data)?;
    for s in &report.summary {
        println!(
            "n={:<4} cells={:<3} gap={:+.4} |gap|={:.4} train_acc={:.3} test_acc={:.3}",
            s.n, s.cells, s.mean_gap, s.mean_abs_gap, s.mean_train_accuracy, s.mean_test_accuracy
        );
    }
    Ok(())
}
