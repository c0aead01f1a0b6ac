//! Forward pass, adapter gradients and a finite-difference check on a
//! two-layer adapted network.
//!
//! cargo run --example lora_gradients

use dplora::lora::{LoraAdapter, LoraModel, ModelConfig};
use dplora::numerics::{gaussian_sample, Rng};

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig { layers: 2, width: 16, rank: 4, num_classes: 3, ..ModelConfig::default() };
    let mut model = LoraModel::init(&cfg, &Rng::new(1))?;
    println!("trainable {} of {} dense weights", model.trainable_param_count(), model.densify().param_count());

    let mut rng = Rng::new(2);
    let adapters = (0..cfg.layers)
        .map(|_| LoraAdapter::new(gaussian_sample(&mut rng, 16, 4, 0.0, 0.3)?, gaussian_sample(&mut rng, 4, 16, 0.0, 0.3)?))
        .collect::<Result<Vec<_>, _>>()?;
    model.set_adapters(&adapters)?;

    let x = gaussian_sample(&mut rng, 16, 5, 0.0, 1.0)?;
    let labels = [0, 2, 1, 1, 0];
    let (loss, grads) = model.gradients(&x, &labels)?;
    println!("loss {loss:.6}");

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (l, g) in grads.iter().enumerate() {
        for idx in 0..g.g_a.len() {
            let at = |d: f64| -> anyhow::Result<f64> {
                let mut set = adapters.clone();
                let mut a = set[l].a().clone();
                a.as_mut_slice()[idx] += d;
                set[l] = LoraAdapter::new(a, set[l].b().clone())?;
                let mut m = model.clone();
                m.set_adapters(&set)?;
                Ok(m.gradients(&x, &labels)?.0)
            };
            let fd = (at(h)? - at(-h)?) / (2.0 * h);
            let an = g.g_a.as_slice()[idx];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
        }
    }
    println!("max relative error of dL/dA against central differences: {worst:.2e}");
    Ok(())
}
