//! Privacy spent by a fixed noise multiplier, and the multiplier needed for
//! a target budget, under both accountants.
//!
//! cargo run --example privacy_accounting

use dplora::privacy::{
    moments_epsilon, sequential_epsilon, sigma_calibrate_formula, sigma_calibrate_numeric, CalibrationMode,
    PrivacyParams,
};

fn main() -> anyhow::Result<()> {
    let p = PrivacyParams {
        sigma: 2.0,
        q: 0.01,
        t_rounds: 1000,
        delta: 1e-5,
        rho_bar: 1.0,
        ..PrivacyParams::default()
    };
    let m = moments_epsilon(&p)?;
    let s = sequential_epsilon(p.sigma, p.delta, p.t_rounds, p.t_rounds)?;
    println!("sigma=2 q=0.01 T=1000 delta=1e-5");
    println!("  moments:    eps = {:.4} (lambda* = {:?})", m.epsilon, m.lambda_star);
    println!("  sequential: eps = {:.1}", s.epsilon);

    // Equal weights over K nodes give rho_bar = 1/sqrt(K).
    println!("\ntarget eps=0.07, q=0.001, T=10000");
    println!("   K  rho_bar   sigma(numeric)  sigma(theorem, c2=1)");
    for k in [1usize, 2, 5, 10] {
        let rho_bar = 1.0 / (k as f64).sqrt();
        let numeric = sigma_calibrate_numeric(0.07, 1e-5, 0.001, 10_000, rho_bar)?;
        let formula = sigma_calibrate_formula(
            &PrivacyParams { epsilon: 0.07, q: 0.001, t_rounds: 10_000, rho_bar, ..PrivacyParams::default() },
            CalibrationMode::Theorem,
        )?;
        println!("{k:>4}  {rho_bar:.4}   {numeric:>14.4}  {formula:>20.4}");
    }

    let out_of_range = PrivacyParams { q: 0.05, ..p };
    if let Err(e) = moments_epsilon(&out_of_range) {
        println!("\nq=0.05, sigma=2: {e}");
    }
    for w in p.warnings() {
        println!("note: {w}");
    }
    Ok(())
}
