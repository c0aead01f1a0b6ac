//! Final accuracy as the noise multiplier grows, averaged over seeds.
//!
//! cargo run --release --example privacy_utility_sweep

use dplora::config::{NoiseSpec, TrainConfig};
use dplora::federation::run_federated;

fn main() -> anyhow::Result<()> {
    println!("sigma  accuracy per seed            mean");
    for sigma in [0.0, 0.5, 2.0, 8.0] {
        let mut accs = Vec::new();
        for seed in 0..3 {
            let mut cfg = TrainConfig::default();
            cfg.seed = seed;
            cfg.rounds = 200;
            cfg.data.samples = 5000;
            cfg.data.margin = 30.0;
            cfg.model.layers = 1;
            cfg.model.width = 32;
            cfg.model.rank = 4;
            cfg.noise = NoiseSpec::Sigma(sigma);
            accs.push(run_federated(&cfg)?.records.last().unwrap().acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{sigma:>5}  {:<28} {mean:.4}", format!("{accs:.4?}"));
    }
    Ok(())
}
