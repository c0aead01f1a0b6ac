//! A private federated run on a synthetic task, with metrics and a
//! checkpoint written to a temporary directory.
//!
//! cargo run --release --example federated_training

use dplora::config::{ConfigLayer, TrainConfig};
use dplora::lora::read_checkpoint;
use dplora::report;

const CONFIG: &str = r#"
seed = 1

[federation]
nodes = 5
rounds = 100

[privacy]
epsilon = 2.0
delta = 1e-5

[model]
layers = 1
width = 32
rank = 4

[data]
samples = 5000
margin = 30.0
"#;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("dplora-federated-example");
    let flags = ConfigLayer {
        output: dplora::config::OutputSection { dir: Some(dir.clone()) },
        ..ConfigLayer::default()
    };
    let cfg = TrainConfig::from_sources(Some(CONFIG), &flags)?;
    let (out, files) = report::train(&cfg)?;

    println!("calibrated sigma {:.4} for eps 2 (q = {}, rho_bar = {:.4})", out.sigma, out.q, out.rho_bar);
    for r in out.records.iter().step_by(20).chain(out.records.last()) {
        println!(
            "round {:>3}: loss {:.4}  acc {:.4}  eps {:.4}",
            r.t,
            r.loss,
            r.acc,
            r.eps_spent.unwrap_or(f64::NAN)
        );
    }
    let ckpt = read_checkpoint(&mut std::fs::File::open(files.checkpoint.as_ref().unwrap())?)?;
    println!("checkpoint: {} layer(s), seed {}; files in {}", ckpt.layers.len(), ckpt.seed, dir.display());
    Ok(())
}
