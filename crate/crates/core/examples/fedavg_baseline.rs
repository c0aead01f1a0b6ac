//! Adapter uploads against full-weight federated averaging on the same
//! data, batches and starting network.
//!
//! cargo run --release --example fedavg_baseline

use dplora::config::{NoiseSpec, TrainConfig};
use dplora::federation::{run_fedavg_baseline, run_federated};

fn main() -> anyhow::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.rounds = 100;
    cfg.data.samples = 5000;
    cfg.data.margin = 30.0;
    cfg.model.layers = 1;
    cfg.model.width = 32;
    cfg.noise = NoiseSpec::Sigma(0.0);

    println!("mode      rank  upload/node/round  final acc");
    for rank in [2, 4, 8, 16] {
        cfg.model.rank = rank;
        let out = run_federated(&cfg)?;
        let last = out.records.last().unwrap();
        println!("adapter {rank:>6}  {:>17}  {:.4}", last.upload_params[0], last.acc);
    }
    let dense = run_fedavg_baseline(&cfg)?;
    let last = dense.records.last().unwrap();
    println!("fedavg       -  {:>17}  {:.4}", last.upload_params[0], last.acc);
    Ok(())
}
