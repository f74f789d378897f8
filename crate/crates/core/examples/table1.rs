//! Test DP with and without group-balanced minibatches.

use fairgen::harness::{self, ExperimentConfig};
use fairgen::trainer::Method;

fn main() -> fairgen::Result<()> {
    let cfg = ExperimentConfig {
        n: vec![500],
        repeats: 3,
        epochs: 20,
        table1_methods: vec![Method::DiffDp, Method::PRemover],
        ..ExperimentConfig::default()
    };
    let data = cfg.load()?;
    let report = harness::run_table1(&cfg, &data)?;
    for r in &report.records {
        println!("{:<9} repeat {} unbalanced={:.4} balanced={:.4}", r.method, r.repeat, r.unbalanced, r.balanced);
    }
    for s in &report.summary {
        println!("{:<9} n={} mean unbalanced={:.4} balanced={:.4}", s.method, s.n, s.mean_unbalanced, s.mean_balanced);
    }
    Ok(())
}
