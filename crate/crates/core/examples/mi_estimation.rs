//! Mutual information between a fair coin and a noisy real signal, by the
//! nearest-neighbor, partitioning and discretized plug-in estimators.

use fairgen::miest::{mi_disc_scalar, mi_partitioning, mi_plugin_discrete};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fairgen::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    println!("ln 2 = {:.4}", std::f64::consts::LN_2);
    for noise in [0.05, 0.5, 2.0] {
        let bits: Vec<u8> = (0..4000).map(|_| rng.random_range(0..2)).collect();
        let x: Vec<f64> = bits.iter().map(|&b| f64::from(b) + noise * (rng.random::<f64>() - 0.5)).collect();
        let knn = mi_disc_scalar(&bits, &x, 3)?;
        let part = mi_partitioning(&bits, &x, 3)?;
        let rounded: Vec<(u8, i64)> = bits.iter().zip(&x).map(|(&b, &v)| (b, (v * 4.0).round() as i64)).collect();
        let plug = mi_plugin_discrete(&rounded)?;
        println!("noise {noise:<4} knn={:.4} partition={:.4} plug-in={:.4}", knn.value, part.value, plug.value);
    }
    Ok(())
}
