use serde::{Deserialize, Serialize};

use super::accountant::{check_delta, check_q, check_rho_bar, moments_epsilon, PrivacyParams};
use crate::error::{Error, Result};

/// Resolution of the grid searched by [`sigma_calibrate_numeric`].
pub const SIGMA_GRID: f64 = 1e-4;

/// How to turn a target `(ε, δ)` into a noise multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// `c₂·q·√(T·ln(1/δ)) / (ρ̄·ε)`
    Theorem,
    /// Twice the theorem value, as the bound's derivation produces.
    Proof,
    /// Bisection on the moments accountant.
    #[default]
    Numeric,
}

/// Classic single-release Gaussian mechanism noise, `√(2·ln(1.25/δ)) / ε`.
pub fn sigma_single_step(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be > 0, got {epsilon}")));
    }
    check_delta(delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Closed-form noise multiplier for `T` federated rounds,
/// `c₂·q·√(T·ln(1/δ)) / (ρ̄·ε)`, doubled in [`CalibrationMode::Proof`].
pub fn sigma_calibrate_formula(p: &PrivacyParams, mode: CalibrationMode) -> Result<f64> {
    if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be > 0, got {}", p.epsilon)));
    }
    if !(p.c2 > 0.0) {
        return Err(Error::param("c2", format!("must be > 0, got {}", p.c2)));
    }
    check_delta(p.delta)?;
    check_q(p.q)?;
    check_rho_bar(p.rho_bar)?;
    if p.t_rounds == 0 {
        return Err(Error::param("t_rounds", "must be >= 1"));
    }
    let factor = match mode {
        CalibrationMode::Theorem => 1.0,
        CalibrationMode::Proof => 2.0,
        CalibrationMode::Numeric => {
            return Err(Error::param("mode", "numeric calibration has no closed form"))
        }
    };
    let t = p.t_rounds as f64;
    Ok(factor * p.c2 * p.q * (t * (1.0 / p.delta).ln()).sqrt() / (p.rho_bar * p.epsilon))
}

/// Smallest σ on the `1e-4` grid whose moments-accountant ε is at most
/// `target_epsilon`.
///
/// Grid points where the moments bound does not apply count as
/// infinitely private-unfriendly. Inside the admissible region ε does not
/// increase with σ (α shrinks and the admissible orders only grow), so
/// bisection finds the crossing. The returned σ satisfies
/// `ε(σ) ≤ target < ε(σ − 1e-4)`.
pub fn sigma_calibrate_numeric(
    target_epsilon: f64,
    delta: f64,
    q: f64,
    t: u64,
    rho_bar: f64,
) -> Result<f64> {
    if !(target_epsilon > 0.0 && target_epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be > 0, got {target_epsilon}")));
    }
    check_delta(delta)?;
    check_q(q)?;
    check_rho_bar(rho_bar)?;
    if t == 0 {
        return Err(Error::param("t_rounds", "must be >= 1"));
    }
    let eps_at = |i: u64| -> f64 {
        let p = PrivacyParams {
            sigma: i as f64 / 1e4,
            delta,
            q,
            t_rounds: t,
            rho_bar,
            ..PrivacyParams::default()
        };
        moments_epsilon(&p).map_or(f64::INFINITY, |s| s.epsilon)
    };
    // Largest grid index still satisfying q < 1/(16σ).
    let mut hi = (1e4 / (16.0 * q)).ceil() as u64;
    while hi > 0 && !(q < 1.0 / (16.0 * (hi as f64 / 1e4))) {
        hi -= 1;
    }
    if hi == 0 || eps_at(hi) > target_epsilon {
        return Err(Error::Inapplicable(format!(
            "target epsilon {target_epsilon} is unreachable: best attainable within the \
             moments regime (sigma < 1/(16 q)) is {}",
            if hi == 0 { f64::INFINITY } else { eps_at(hi) }
        )));
    }
    if eps_at(1) <= target_epsilon {
        return Ok(1.0 / 1e4);
    }
    // Invariant: eps(lo) > target >= eps(hi).
    let mut lo = 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps_at(mid) <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi as f64 / 1e4)
}
