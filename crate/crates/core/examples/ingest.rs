//! Loads COMPAS with gender as the sensitive attribute and prints group sizes.

use fairgen::data::group_counts;
use fairgen::harness::ExperimentConfig;

fn main() -> fairgen::Result<()> {
    let cfg = ExperimentConfig::default();
    let (csv, schema) = cfg.sources()?;
    println!("csv    {}", csv.display());
    println!("schema {}", schema.display());

    let data = cfg.load()?;
    let counts = group_counts(&data);
    println!("rows={} features={} classes={}", data.len(), data.feature_dim(), data.num_classes());
    println!("n_t = {:?}", counts.dp);
    for t in 0..2u8 {
        let cells: Vec<usize> = (0..data.num_classes()).map(|y| counts.n_ty(t, y)).collect();
        println!("t={t} by label {cells:?}");
    }
    Ok(())
}
