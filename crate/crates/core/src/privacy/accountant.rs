use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard ceiling on the moment orders searched by the moments accountant.
pub const LAMBDA_CAP: u32 = 512;

/// Which composition rule produced a privacy figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Accountant {
    Sequential,
    #[default]
    Moments,
}

/// Cumulative `(ε, δ)` spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpent {
    pub epsilon: f64,
    pub delta: f64,
    pub accountant: Accountant,
    /// Moment order achieving the bound (moments accountant only).
    pub lambda_star: Option<u32>,
}

/// Parameters governing noise calibration and accounting for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Noise multiplier; per-entry noise std is `sigma · clip_c`.
    pub sigma: f64,
    pub clip_c: f64,
    /// Sampling probability `B / N_k`.
    pub q: f64,
    pub t_rounds: u64,
    /// `√(Σ ρ_k²)` of the aggregation weights.
    pub rho_bar: f64,
    pub c2: f64,
    /// Constant of the `ε < c₁·q²·T` precondition. Only ever used for a
    /// warning.
    pub c1: Option<f64>,
}

impl Default for PrivacyParams {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            delta: 1e-5,
            sigma: 2.0,
            clip_c: 10.0,
            q: 0.01,
            t_rounds: 50,
            rho_bar: 1.0,
            c2: 1.0,
            c1: None,
        }
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

pub(crate) fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param("q", format!("must lie in (0, 1], got {q}")));
    }
    Ok(())
}

pub(crate) fn check_rho_bar(rho_bar: f64) -> Result<()> {
    if !(rho_bar > 0.0 && rho_bar <= 1.0 + 1e-12) {
        return Err(Error::param("rho_bar", format!("must lie in (0, 1], got {rho_bar}")));
    }
    Ok(())
}

impl PrivacyParams {
    /// Checks the ranges needed by accounting (ε itself is not needed).
    pub fn validate_for_accounting(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_q(self.q)?;
        check_rho_bar(self.rho_bar)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be finite and >= 0, got {}", self.sigma)));
        }
        if self.t_rounds == 0 {
            return Err(Error::param("t_rounds", "must be >= 1"));
        }
        Ok(())
    }

    /// Whether the moments bound applies: `q < 1/(16σ)` and at least one
    /// integer order is admissible.
    pub fn moments_regime_valid(&self) -> bool {
        max_lambda(self.q, self.sigma, self.rho_bar).is_ok()
    }

    /// Caveats that accompany any figure computed from these parameters.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = vec![
            "dominant-term bound: the O(q^3 lambda^3 / (rho_bar^1.5 sigma^3)) term is omitted"
                .to_string(),
            "batches are drawn as fixed-size samples without replacement; the moments bound \
             assumes independent inclusion with probability q"
                .to_string(),
        ];
        if self.sigma <= 1.0 {
            w.push(format!("sigma = {} is not > 1 as the moments lemma assumes", self.sigma));
        }
        if let Some(c1) = self.c1 {
            let limit = c1 * self.q * self.q * self.t_rounds as f64;
            if !(self.epsilon < limit) {
                w.push(format!(
                    "epsilon = {} violates epsilon < c1*q^2*T = {limit}",
                    self.epsilon
                ));
            }
        }
        w
    }
}

/// Largest admissible moment order, `⌊ρ̄²σ²·ln(1/(qσ))⌋` capped at
/// [`LAMBDA_CAP`]. Errors when `q ≥ 1/(16σ)` or no order is admissible.
pub fn max_lambda(q: f64, sigma: f64, rho_bar: f64) -> Result<u32> {
    check_q(q)?;
    check_rho_bar(rho_bar)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Inapplicable(format!(
            "moments bound needs sigma > 0, got {sigma}"
        )));
    }
    if !(q < 1.0 / (16.0 * sigma)) {
        return Err(Error::Inapplicable(format!(
            "q = {q} is not below 1/(16 sigma) = {}",
            1.0 / (16.0 * sigma)
        )));
    }
    let bound = rho_bar * rho_bar * sigma * sigma * (1.0 / (q * sigma)).ln();
    if bound < 1.0 {
        return Err(Error::Inapplicable(format!(
            "no admissible moment order: rho_bar^2 sigma^2 ln(1/(q sigma)) = {bound} < 1"
        )));
    }
    Ok(bound.floor().min(LAMBDA_CAP as f64) as u32)
}

/// Dominant term of the per-step log moment bound,
/// `q²·λ·(λ+1) / ((1−q)·ρ̄²·σ²)`.
pub fn moments_alpha(lambda: u32, q: f64, sigma: f64, rho_bar: f64) -> Result<f64> {
    if lambda == 0 {
        return Err(Error::param("lambda", "must be a positive integer"));
    }
    let max = max_lambda(q, sigma, rho_bar)?;
    if lambda > max {
        return Err(Error::Inapplicable(format!(
            "lambda = {lambda} exceeds the admissible maximum {max}"
        )));
    }
    let l = lambda as f64;
    Ok(q * q * l * (l + 1.0) / ((1.0 - q) * rho_bar * rho_bar * sigma * sigma))
}

/// `ε(δ) = min_λ (T·α(λ) + ln(1/δ)) / λ` over every admissible integer
/// order. Ties resolve to the smallest λ.
pub fn moments_epsilon(p: &PrivacyParams) -> Result<PrivacySpent> {
    p.validate_for_accounting()?;
    let max = max_lambda(p.q, p.sigma, p.rho_bar)?;
    let log_inv_delta = (1.0 / p.delta).ln();
    let t = p.t_rounds as f64;
    let mut best: Option<(f64, u32)> = None;
    for lambda in 1..=max {
        let alpha = moments_alpha(lambda, p.q, p.sigma, p.rho_bar)?;
        let eps = (t * alpha + log_inv_delta) / lambda as f64;
        if best.is_none_or(|(b, _)| eps < b) {
            best = Some((eps, lambda));
        }
    }
    let (epsilon, lambda) = best.expect("max_lambda >= 1");
    Ok(PrivacySpent {
        epsilon,
        delta: p.delta,
        accountant: Accountant::Moments,
        lambda_star: Some(lambda),
    })
}

/// Sums `ε` and `δ` across mechanisms. An empty list costs nothing.
pub fn sequential_composition(steps: &[(f64, f64)]) -> Result<PrivacySpent> {
    let (mut eps, mut delta) = (0.0, 0.0);
    for (i, &(e, d)) in steps.iter().enumerate() {
        if !(e >= 0.0 && e.is_finite()) || !(0.0..1.0).contains(&d) {
            return Err(Error::param(
                "steps",
                format!("step {i} has invalid (epsilon, delta) = ({e}, {d})"),
            ));
        }
        eps += e;
        delta += d;
    }
    Ok(PrivacySpent {
        epsilon: eps,
        delta,
        accountant: Accountant::Sequential,
        lambda_star: None,
    })
}

/// Per-step `ε` of the Gaussian mechanism at noise multiplier `sigma`,
/// i.e. `√(2·ln(1.25/δ)) / σ`.
pub fn single_step_epsilon(sigma: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", format!("must be > 0, got {sigma}")));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / sigma)
}

/// Sequential accounting of `rounds` Gaussian steps, splitting the total
/// `delta` evenly so each step runs at `δ / T`.
pub fn sequential_epsilon(sigma: f64, delta: f64, rounds: u64, total_rounds: u64) -> Result<PrivacySpent> {
    if total_rounds == 0 || rounds > total_rounds {
        return Err(Error::param("t_rounds", format!("{rounds} of {total_rounds} rounds")));
    }
    check_delta(delta)?;
    let step_delta = delta / total_rounds as f64;
    let step_eps = single_step_epsilon(sigma, step_delta)?;
    sequential_composition(&vec![(step_eps, step_delta); rounds as usize])
}

/// Euclidean norm of the aggregation weights. Weights must be
/// non-negative and sum to one within `1e-12`.
pub fn rho_bar(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::param("weights", "need at least one weight"));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::param("weights", "must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::param("weights", format!("must sum to 1, got {sum}")));
    }
    Ok(weights.iter().map(|w| w * w).sum::<f64>().sqrt())
}
