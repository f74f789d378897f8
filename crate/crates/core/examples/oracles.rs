//! Exact checks of the concentration inequalities behind the bounds, plus the
//! hand-sized cases that pin down the sensitivity constants.

use fairgen::fairness::FairnessMetric;
use fairgen::oracles::{self, Lemma, ReplacementScope, SuiteConfig};

fn main() -> fairgen::Result<()> {
    // Two samples, scores in {0, 1}: swapping one sample moves the DP loss by
    // at most 1/3 when group sizes are held, 1/2 when a sample may change group.
    for scope in [ReplacementScope::FixedCounts, ReplacementScope::AllCases] {
        let r = oracles::check_lemma3(2, &[0.0, 1.0], scope, oracles::DEFAULT_BUDGET)?;
        println!("{scope:?}: max change {:.4} vs bound {:.4}", r.max_observed, r.bound);
    }

    let cfg = SuiteConfig { instances: 100, ..SuiteConfig::default() };
    for lemma in Lemma::ALL {
        println!("{}", oracles::run_suite(lemma, &cfg)?);
    }

    let ss = oracles::chain_instance(0)?;
    let info = oracles::check_data_processing(&ss, FairnessMetric::Dp)?;
    println!(
        "I(dL; R1)={:.5} <= I(L; R)={:.5} <= I(F; R)={:.5}: {}",
        info.delta_vs_anchor,
        info.losses_vs_selection,
        info.predictions_vs_selection,
        info.ordered()
    );
    Ok(())
}
