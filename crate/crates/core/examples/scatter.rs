//! Per-supersample bound against per-supersample |gap| on synthetic data,
//! with the least-squares line through them.

use fairgen::harness::{self, ExperimentConfig};

fn main() -> fairgen::Result<()> {
    let data = harness::synthetic_dataset(2000, 6, 7)?;
    let cfg = ExperimentConfig { n: vec![50, 200], m1: 4, m2: 16, epochs: 10, ..ExperimentConfig::default() };
    let report = harness::run_bound_experiment(&cfg, &data)?;
    let points = report.scatter_points();
    for (b, g) in &points {
        println!("bound={b:.4} |gap|={g:.4}");
    }
    let stats = harness::scatter_stats(&points)?;
    println!("r={:.3} slope={:.3} intercept={:.4}", stats.r, stats.slope, stats.intercept);
    Ok(())
}
