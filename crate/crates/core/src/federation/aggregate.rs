use crate::error::{Error, Result};
use crate::lora::{AdapterSet, LoraAdapter};
use crate::numerics::Matrix;

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Protocol("aggregation weights must be non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Protocol(format!("aggregation weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `Σ_k w_k · M_k`, accumulated in ascending `k` from zero.
pub fn weighted_sum(mats: &[&Matrix], weights: &[f64]) -> Result<Matrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Protocol("nothing to aggregate".into()))?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for (m, &w) in mats.iter().zip(weights) {
        if m.shape() != first.shape() {
            return Err(Error::Protocol(format!(
                "upload shape {:?} differs from {:?}",
                m.shape(),
                first.shape()
            )));
        }
        acc.axpy(w, m)?;
    }
    Ok(acc)
}

/// Weighted average of node uploads: per layer `A = Σ ρ_k A_k`,
/// `B = Σ ρ_k B_k`, in ascending node order.
pub fn aggregate(uploads: &[AdapterSet], weights: &[f64]) -> Result<AdapterSet> {
    if uploads.is_empty() || uploads.len() != weights.len() {
        return Err(Error::Protocol(format!(
            "{} uploads with {} weights",
            uploads.len(),
            weights.len()
        )));
    }
    check_simplex(weights)?;
    let layers = uploads[0].len();
    if uploads.iter().any(|u| u.len() != layers) {
        return Err(Error::Protocol("uploads disagree on layer count".into()));
    }
    (0..layers)
        .map(|l| {
            let a: Vec<&Matrix> = uploads.iter().map(|u| u[l].a()).collect();
            let b: Vec<&Matrix> = uploads.iter().map(|u| u[l].b()).collect();
            LoraAdapter::new(weighted_sum(&a, weights)?, weighted_sum(&b, weights)?)
                .map_err(|e| Error::Protocol(e.to_string()))
        })
        .collect()
}

/// Weighted average of dense weight uploads (one matrix per layer).
pub fn aggregate_dense(uploads: &[Vec<Matrix>], weights: &[f64]) -> Result<Vec<Matrix>> {
    if uploads.is_empty() || uploads.len() != weights.len() {
        return Err(Error::Protocol(format!(
            "{} uploads with {} weights",
            uploads.len(),
            weights.len()
        )));
    }
    check_simplex(weights)?;
    let layers = uploads[0].len();
    if uploads.iter().any(|u| u.len() != layers) {
        return Err(Error::Protocol("uploads disagree on layer count".into()));
    }
    (0..layers)
        .map(|l| {
            let mats: Vec<&Matrix> = uploads.iter().map(|u| &u[l]).collect();
            weighted_sum(&mats, weights)
        })
        .collect()
}
