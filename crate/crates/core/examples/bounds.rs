//! Estimates the loss-difference bound on COMPAS and compares it with the
//! measured gap.

use fairgen::harness::{self, ExperimentConfig};

fn main() -> fairgen::Result<()> {
    let cfg = ExperimentConfig { n: vec![200], m1: 2, m2: 20, epochs: 20, lambda: Some(2.0), ..ExperimentConfig::default() };
    let data = cfg.load()?;
    let report = harness::run_bound_experiment(&cfg, &data)?;
    for row in &report.rows {
        println!(
            "n={} m={} bound={:.4} (coeff {:.3e}, mi {:.4} nats) |gap|={:.4} dominates={}",
            row.n,
            row.bound.m,
            row.bound.value,
            row.bound.coefficient,
            row.bound.mi,
            row.gap.mean_abs_gap,
            row.dominates()
        );
    }
    Ok(())
}
