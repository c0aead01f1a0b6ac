//! Randomised checks of the invariants each module promises.

use dplora::config::{ConfigLayer, NoiseSpec, TrainConfig};
use dplora::federation::{read_jsonl, write_jsonl, RoundRecord};
use dplora::ledger::lora_overhead;
use dplora::lora::{lora_forward, lora_param_count, LoraAdapter, LoraLayer};
use dplora::numerics::{gaussian_sample, linear_forward, Matrix, Rng};
use dplora::privacy::{moments_epsilon, rho_bar, sequential_epsilon, Accountant, PrivacyParams};
use proptest::prelude::*;

fn random(seed: u64, rows: usize, cols: usize, std: f64) -> Matrix {
    gaussian_sample(&mut dplora::numerics::Rng::new(seed), rows, cols, 0.0, std).unwrap()
}

fn layer(seed: u64, n: usize, r: usize, zero_b: bool) -> LoraLayer {
    let mut rng = Rng::new(seed);
    let base = gaussian_sample(&mut rng, n, n, 0.0, 1.0).unwrap();
    let a = gaussian_sample(&mut rng, n, r, 0.0, 1.0).unwrap();
    let b = if zero_b { Matrix::zeros(r, n) } else { gaussian_sample(&mut rng, r, n, 0.0, 1.0).unwrap() };
    let bias = gaussian_sample(&mut rng, n, 1, 0.0, 1.0).unwrap();
    LoraLayer::new(base, LoraAdapter::new(a, b).unwrap(), bias).unwrap()
}

fn valid_params() -> impl Strategy<Value = PrivacyParams> {
    (1.0f64..8.0, -4.0f64..-2.0, 1u64..5000, -9.0f64..-3.0, 0.3f64..1.0).prop_filter_map(
        "outside the moments regime",
        |(sigma, lq, t, ld, rb)| {
            let p = PrivacyParams {
                sigma,
                q: 10f64.powf(lq),
                t_rounds: t,
                delta: 10f64.powf(ld),
                rho_bar: rb,
                ..PrivacyParams::default()
            };
            moments_epsilon(&p).is_ok().then_some(p)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frobenius_is_absolutely_homogeneous(seed: u64, rows in 1usize..6, cols in 1usize..6, c in -1e3f64..1e3) {
        let m = random(seed, rows, cols, 1.0);
        let lhs = m.scale(c).frobenius_norm();
        let rhs = c.abs() * m.frobenius_norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn finite_inputs_give_finite_outputs(seed: u64, n in 1usize..8, b in 1usize..5, std in 0.0f64..1e3) {
        let w = random(seed, n, n, std);
        let x = random(seed ^ 1, n, b, std);
        let bias = random(seed ^ 2, n, 1, std);
        prop_assert!(linear_forward(&x, &w, &bias).unwrap().is_finite());
        prop_assert!(w.matmul(&x).unwrap().is_finite());
    }

    #[test]
    fn zero_adapter_is_bitwise_neutral(seed: u64, n in 1usize..10, r in 1usize..4, b in 1usize..5) {
        let r = r.min(n);
        let l = layer(seed, n, r, true);
        let x = random(seed ^ 3, n, b, 1.0);
        let lora = lora_forward(&x, &l, 1.0).unwrap();
        let base = linear_forward(&x, l.base(), l.bias()).unwrap();
        prop_assert!(lora.bit_eq(&base));
    }

    #[test]
    fn factored_forward_matches_dense(seed: u64, n in 1usize..10, r in 1usize..4, b in 1usize..5, s in 0.1f64..3.0) {
        let r = r.min(n);
        let l = layer(seed, n, r, false);
        let x = random(seed ^ 4, n, b, 1.0);
        let lora = lora_forward(&x, &l, s).unwrap();
        let w = l.base().add(&l.adapter().delta().scale(s)).unwrap();
        let dense = linear_forward(&x, &w, l.bias()).unwrap();
        prop_assert!(lora.max_abs_diff(&dense).unwrap() < 1e-12 * (1.0 + dense.max_abs()));
    }

    #[test]
    fn param_count_is_linear(l in 1u64..100, n in 1u64..5000, r in 1u64..64, k in 2u64..9) {
        let base = lora_param_count(l, n, r).unwrap();
        prop_assert_eq!(lora_param_count(k * l, n, r).unwrap(), k * base);
        prop_assert_eq!(lora_param_count(l, k * n, r).unwrap(), k * base);
        prop_assert_eq!(lora_param_count(l, n, k * r).unwrap(), k * base);
    }

    #[test]
    fn overhead_strictly_monotone(t in 1u64..100, k in 1u64..20, l in 1u64..40, r in 1u64..64, n in 1u64..4096) {
        let base = lora_overhead(t, k, l, r, n).unwrap().total;
        prop_assert!(lora_overhead(t + 1, k, l, r, n).unwrap().total > base);
        prop_assert!(lora_overhead(t, k + 1, l, r, n).unwrap().total > base);
        prop_assert!(lora_overhead(t, k, l + 1, r, n).unwrap().total > base);
        prop_assert!(lora_overhead(t, k, l, r + 1, n).unwrap().total > base);
        prop_assert!(lora_overhead(t, k, l, r, n + 1).unwrap().total > base);
    }

    #[test]
    fn adapter_cheaper_exactly_below_half_width(n in 1u64..10_000, r in 1u64..10_000) {
        let per = lora_overhead(1, 1, 1, r, n).unwrap();
        prop_assert_eq!(per.per_round_per_node < per.baseline_total, 2 * r < n);
        prop_assert_eq!(per.per_round_per_node == per.baseline_total, 2 * r == n);
    }

    #[test]
    fn rho_bar_bounds(raw in proptest::collection::vec(1e-6f64..1.0, 1..20)) {
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let head: f64 = w[..w.len() - 1].iter().sum();
        *w.last_mut().unwrap() = 1.0 - head;
        prop_assume!(w.iter().all(|&v| v >= 0.0));
        let rb = rho_bar(&w).unwrap();
        let k = w.len() as f64;
        prop_assert!(rb >= 1.0 / k.sqrt() - 1e-12 && rb <= 1.0 + 1e-12);
    }

    #[test]
    fn moments_monotonicity(p in valid_params(), f in 1.0f64..1.5) {
        let e = moments_epsilon(&p).unwrap().epsilon;
        // Larger sigma shrinks the admissible set only through the regime
        // bounds; compare where both are valid.
        if let Ok(more) = moments_epsilon(&PrivacyParams { sigma: p.sigma * f, ..p }) {
            if dplora::privacy::max_lambda(p.q, p.sigma * f, p.rho_bar).unwrap()
                >= dplora::privacy::max_lambda(p.q, p.sigma, p.rho_bar).unwrap()
            {
                prop_assert!(more.epsilon <= e);
            }
        }
        let longer = moments_epsilon(&PrivacyParams { t_rounds: p.t_rounds * 2, ..p }).unwrap();
        prop_assert!(longer.epsilon >= e);
        if let Ok(denser) = moments_epsilon(&PrivacyParams { q: p.q * f, ..p }) {
            prop_assert!(denser.epsilon >= e);
        }
    }

    #[test]
    fn moments_never_exceeds_sequential(p in valid_params()) {
        let m = moments_epsilon(&p).unwrap().epsilon;
        let s = sequential_epsilon(p.sigma, p.delta, p.t_rounds, p.t_rounds).unwrap().epsilon;
        prop_assert!(m <= s, "{} > {}", m, s);
    }

    #[test]
    fn metrics_round_trip(
        rows in proptest::collection::vec(
            (any::<f64>(), 0.0f64..1.0, proptest::option::of(0.0f64..100.0), any::<u32>(), 1usize..8),
            0..20,
        )
    ) {
        let recs: Vec<RoundRecord> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.0.is_finite())
            .map(|(t, &(loss, acc, eps, up, k))| RoundRecord {
                t,
                loss,
                acc,
                eps_spent: eps,
                delta: 1e-5,
                accountant: Accountant::Moments,
                bytes_up: up as u64 * 8,
                bytes_down: up as u64 * 8,
                upload_params: vec![up as u64; k],
            })
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_jsonl(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn config_echo_round_trips(
        seed: u64,
        nodes in 1usize..10,
        rank in 1usize..16,
        lr in 1e-6f64..1.0,
        clip in prop_oneof![Just(f64::INFINITY), 0.1f64..100.0],
        target in proptest::option::of(0.1f64..10.0),
    ) {
        let mut cfg = TrainConfig::default();
        cfg.seed = seed;
        cfg.nodes = nodes;
        cfg.model.rank = rank;
        cfg.model.width = 16;
        cfg.learning_rate = lr;
        cfg.clip = clip;
        cfg.noise = match target {
            Some(e) if clip.is_finite() => NoiseSpec::TargetEpsilon(e),
            _ if clip.is_finite() => NoiseSpec::Sigma(1.5),
            _ => NoiseSpec::Sigma(0.0),
        };
        let back = TrainConfig::from_sources(Some(&cfg.to_toml()), &ConfigLayer::default()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
