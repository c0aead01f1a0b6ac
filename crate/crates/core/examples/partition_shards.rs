//! Splitting a synthetic dataset across nodes, and what that does to the
//! aggregation weights.
//!
//! cargo run --example partition_shards

use dplora::datagen::{make_synthetic, partition, PartitionMode};
use dplora::numerics::Rng;
use dplora::privacy::rho_bar;

fn main() -> anyhow::Result<()> {
    let data = make_synthetic(3, 1000, 8, 3, 4.0)?;
    for mode in [
        PartitionMode::Even,
        PartitionMode::Dirichlet { alpha: 10.0 },
        PartitionMode::Dirichlet { alpha: 0.3 },
    ] {
        let p = partition(&data, 5, mode, &mut Rng::new(4))?;
        let w = p.weights();
        println!("{mode:?}: sizes {:?}, rho_bar {:.4}", p.sizes(), rho_bar(&w)?);
    }
    println!("1/sqrt(5) = {:.4}", 1.0 / 5f64.sqrt());
    Ok(())
}
