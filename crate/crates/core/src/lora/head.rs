use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// Elementwise nonlinearity applied between hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    pub fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Tanh => z.map(f64::tanh),
        }
    }

    /// Derivative expressed through the activation output `h`.
    pub fn derivative_from_output(self, h: &Matrix) -> Matrix {
        match self {
            Activation::Tanh => h.map(|v| 1.0 - v * v),
        }
    }
}

/// Mean softmax cross-entropy of the first `classes` rows of `z` (one
/// sample per column), and its gradient with respect to all of `z`.
pub(crate) fn softmax_cross_entropy(z: &Matrix, labels: &[usize], classes: usize) -> (f64, Matrix) {
    let batch = z.cols();
    let mut grad = Matrix::zeros(z.rows(), batch);
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for (j, &y) in labels.iter().enumerate() {
        let max = (0..classes).map(|c| z[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..classes).map(|c| (z[(c, j)] - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - z[(y, j)];
        for c in 0..classes {
            let p = (z[(c, j)] - log_norm).exp();
            grad[(c, j)] = (p - if c == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    (loss * inv, grad)
}

/// Fraction of columns whose arg-max over the first `classes` rows equals
/// the label. Ties go to the lowest class index.
pub(crate) fn accuracy(z: &Matrix, labels: &[usize], classes: usize) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(j, &y)| {
            let mut best = 0;
            for c in 1..classes {
                if z[(c, j)] > z[(best, j)] {
                    best = c;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}
