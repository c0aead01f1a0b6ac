//! Quick oracle checks run by `dplora selftest`. Each compares a library
//! result against an independent computation.

use serde::Serialize;

use crate::datagen::{make_synthetic, partition, PartitionMode};
use crate::ledger::{attention_param_count, lora_overhead, reduction_ratio, ModelShape};
use crate::lora::{LoraModel, ModelConfig};
use crate::numerics::{gaussian_sample, Rng};
use crate::privacy::{
    clip_gradient, gaussian_mechanism, max_lambda, moments_alpha, moments_epsilon, rho_bar, sequential_epsilon,
    sigma_calibrate_numeric, PrivacyParams,
};
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("overhead integers", || {
            let a = attention_param_count(&ModelShape::llama_7b())?;
            let run = lora_overhead(50, 5, 1, 256, 4096)?;
            let ok = a.per_block == 4096 * 4096 * 3
                && a.total == 32 * 4096 * 4096 * 3
                && run.per_round_per_node == 2 * 4096 * 256
                && run.total == 2 * 5 * 50 * 4096 * 256;
            Ok((ok, format!("{} / {} / {}", a.per_block, a.total, run.total)))
        }),
        check("reported ratios", || {
            let r1 = reduction_ratio(2_430_000_000, 6_700_000_000)?;
            let r2 = reduction_ratio(1_350_000_000, 6_700_000_000)?;
            Ok(((r1 - 36.27).abs() < 0.01 && (r2 - 20.15).abs() < 0.01, format!("{r1:.4}% {r2:.4}%")))
        }),
        check("clipping bound", || {
            let mut rng = Rng::new(1);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let c = rng.uniform() * 10.0 + 1e-3;
                let scale = rng.uniform() * 50.0;
                let g = gaussian_sample(&mut rng, 4, 3, 0.0, scale)?;
                let out = clip_gradient(&g, c)?;
                worst = worst.max(out.frobenius_norm() / c);
                if g.frobenius_norm() <= c && !out.bit_eq(&g) {
                    return Ok((false, "changed a gradient below the bound".into()));
                }
            }
            Ok((worst <= 1.0, format!("max norm/C = {worst}")))
        }),
        check("noise scale", || {
            let zero = crate::numerics::Matrix::zeros(1000, 100);
            let noised = gaussian_mechanism(&zero, 2.0, 10.0, &mut Rng::new(2))?;
            let n = noised.len() as f64;
            let mean = noised.as_slice().iter().sum::<f64>() / n;
            let var = noised.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            Ok(((std / 20.0 - 1.0).abs() < 0.02, format!("std {std:.4} (want 20)")))
        }),
        check("adapter gradients", || {
            let cfg = ModelConfig {
                layers: 2,
                width: 6,
                rank: 2,
                num_classes: 3,
                ..ModelConfig::default()
            };
            let mut model = LoraModel::init(&cfg, &Rng::new(3))?;
            let mut rng = Rng::new(4);
            let adapters: Vec<_> = (0..2)
                .map(|_| {
                    crate::lora::LoraAdapter::new(
                        gaussian_sample(&mut rng, 6, 2, 0.0, 0.5)?,
                        gaussian_sample(&mut rng, 2, 6, 0.0, 0.5)?,
                    )
                })
                .collect::<Result<_>>()?;
            model.set_adapters(&adapters)?;
            let x = gaussian_sample(&mut rng, 6, 4, 0.0, 1.0)?;
            let labels = [0, 1, 2, 1];
            let (_, grads) = model.gradients(&x, &labels)?;
            let h = 1e-5;
            let mut worst = 0.0f64;
            for l in 0..2 {
                for idx in 0..12 {
                    let bump = |d: f64| -> Result<f64> {
                        let mut set = adapters.clone();
                        let mut b = set[l].b().clone();
                        b.as_mut_slice()[idx] += d;
                        set[l] = crate::lora::LoraAdapter::new(set[l].a().clone(), b)?;
                        let mut m = model.clone();
                        m.set_adapters(&set)?;
                        Ok(m.gradients(&x, &labels)?.0)
                    };
                    let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
                    let an = grads[l].g_b.as_slice()[idx];
                    worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
                }
            }
            Ok((worst < 1e-6, format!("max relative error {worst:.2e}")))
        }),
        check("moments sweep", || {
            let p = PrivacyParams {
                sigma: 2.0,
                q: 0.01,
                t_rounds: 1000,
                delta: 1e-5,
                rho_bar: 1.0,
                ..PrivacyParams::default()
            };
            let spent = moments_epsilon(&p)?;
            let mut best = f64::INFINITY;
            for l in 1..=max_lambda(p.q, p.sigma, p.rho_bar)? {
                let e = (p.t_rounds as f64 * moments_alpha(l, p.q, p.sigma, p.rho_bar)? + (1.0 / p.delta).ln()) / l as f64;
                if e < best {
                    best = e;
                }
            }
            let seq = sequential_epsilon(p.sigma, p.delta, p.t_rounds, p.t_rounds)?.epsilon;
            Ok((spent.epsilon == best && spent.epsilon < seq, format!("moments {:.6} sequential {seq:.2}", spent.epsilon)))
        }),
        check("calibration round trip", || {
            let sigma = sigma_calibrate_numeric(1.0, 1e-5, 0.001, 1000, 1.0)?;
            let eps = |s: f64| {
                moments_epsilon(&PrivacyParams {
                    sigma: s,
                    q: 0.001,
                    t_rounds: 1000,
                    delta: 1e-5,
                    rho_bar: 1.0,
                    ..PrivacyParams::default()
                })
                .map(|p| p.epsilon)
            };
            let ok = eps(sigma)? <= 1.0 && eps(sigma - 1e-4).map_or(true, |e| e > 1.0);
            Ok((ok, format!("sigma {sigma}")))
        }),
        check("even shards", || {
            let d = make_synthetic(5, 100, 4, 2, 1.0)?;
            let p = partition(&d, 5, PartitionMode::Even, &mut Rng::new(6))?;
            let rb = rho_bar(&p.weights())?;
            Ok(((rb - 1.0 / 5f64.sqrt()).abs() < 1e-12, format!("rho_bar {rb}")))
        }),
    ]
}
