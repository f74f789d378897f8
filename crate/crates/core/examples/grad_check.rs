//! Analytic gradients of every training objective against central differences.

use fairgen::harness::{self, ExperimentConfig, GradCheckConfig};

fn main() -> fairgen::Result<()> {
    let cfg = ExperimentConfig { grad_check: GradCheckConfig { batches: 10, ..GradCheckConfig::default() }, ..ExperimentConfig::default() };
    let data = cfg.load()?;
    for row in harness::run_grad_check(&cfg, &data)? {
        println!("{:<9} {:?} max relative error {:.2e}", row.method, row.arch, row.max_relative_error);
    }
    Ok(())
}
