use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, Matrix, Rng};

fn check_bound(c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::param("clip_c", format!("clipping bound must be > 0, got {c}")));
    }
    Ok(())
}

/// `g / max(1, ‖g‖₂ / c)`.
///
/// Inside the ball of radius `c` the input is returned bit for bit. Outside
/// it the result points the same way with norm at most `c`. `c = +∞`
/// disables clipping.
pub fn clip_gradient(g: &Matrix, c: f64) -> Result<Matrix> {
    check_bound(c)?;
    let norm = g.frobenius_norm();
    if norm <= c {
        return Ok(g.clone());
    }
    let factor = norm / c;
    let mut out = g.map(|v| v / factor);
    // Rounding can leave the norm an ulp or two above c.
    while out.frobenius_norm() > c {
        out = out.scale(1.0 - f64::EPSILON);
    }
    Ok(out)
}

/// Clips a group of matrices by their joint norm `√(Σ ‖gᵢ‖²)`.
pub fn clip_global(gs: &[Matrix], c: f64) -> Result<Vec<Matrix>> {
    check_bound(c)?;
    let norm = gs
        .iter()
        .map(|g| g.frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm <= c {
        return Ok(gs.to_vec());
    }
    let factor = norm / c;
    let mut out: Vec<Matrix> = gs.iter().map(|g| g.map(|v| v / factor)).collect();
    loop {
        let n = out.iter().map(|g| g.frobenius_norm().powi(2)).sum::<f64>().sqrt();
        if n <= c {
            return Ok(out);
        }
        out = out.iter().map(|g| g.scale(1.0 - f64::EPSILON)).collect();
    }
}

/// Adds i.i.d. `N(0, (σ·c)²)` to every entry. `σ = 0` returns the input
/// unchanged without drawing.
pub fn gaussian_mechanism(g: &Matrix, sigma: f64, c: f64, rng: &mut Rng) -> Result<Matrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    check_bound(c)?;
    if sigma == 0.0 {
        return Ok(g.clone());
    }
    let std = sigma * c;
    if !std.is_finite() {
        return Err(Error::param(
            "clip_c",
            "noise needs a finite clipping bound when sigma > 0",
        ));
    }
    let noise = gaussian_sample(rng, g.rows(), g.cols(), 0.0, std)?;
    g.add(&noise)
}
