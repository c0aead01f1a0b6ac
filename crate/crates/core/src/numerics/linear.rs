use super::Matrix;
use crate::error::Result;

/// `w · x + b`, with `x` holding one sample per column and `b` either a
/// column vector (broadcast) or a full matrix.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    w.matmul(x)?.add_bias(b)
}

/// Gradients of a scalar loss through `w · x + b`.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    /// `grad_out · xᵀ`
    pub grad_w: Matrix,
    /// `grad_out` summed over the batch columns
    pub grad_b: Matrix,
    /// `wᵀ · grad_out`
    pub grad_x: Matrix,
}

pub fn linear_backward(grad_out: &Matrix, x: &Matrix, w: &Matrix) -> Result<LinearGrads> {
    let grad_w = grad_out.matmul(&x.transpose())?;
    let grad_x = w.transpose().matmul(grad_out)?;
    Ok(LinearGrads {
        grad_w,
        grad_b: grad_out.sum_columns(),
        grad_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, Rng};

    #[test]
    fn identity_weight_passes_input_through() {
        let mut rng = Rng::new(0);
        let x = gaussian_sample(&mut rng, 4, 3, 0.0, 1.0).unwrap();
        let y = linear_forward(&x, &Matrix::identity(4), &Matrix::zeros(4, 1)).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn zero_weight_returns_bias() {
        let c = Matrix::column(&[1.0, -2.0]).unwrap();
        let x = Matrix::filled(3, 1, 7.0);
        let y = linear_forward(&x, &Matrix::zeros(2, 3), &c).unwrap();
        assert!(y.bit_eq(&c));
    }

    #[test]
    fn forward_matches_matmul_plus_add() {
        let mut rng = Rng::new(1);
        let x = gaussian_sample(&mut rng, 5, 4, 0.0, 1.0).unwrap();
        let w = gaussian_sample(&mut rng, 3, 5, 0.0, 1.0).unwrap();
        let b = gaussian_sample(&mut rng, 3, 1, 0.0, 1.0).unwrap();
        let y = linear_forward(&x, &w, &b).unwrap();
        let wx = w.matmul(&x).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(y[(i, j)], wx[(i, j)] + b[(i, 0)]);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::new(2);
        let x = gaussian_sample(&mut rng, 4, 2, 0.0, 1.0).unwrap();
        let w = gaussian_sample(&mut rng, 3, 4, 0.0, 1.0).unwrap();
        let g = linear_backward(&Matrix::zeros(3, 2), &x, &w).unwrap();
        assert_eq!(g.grad_w.max_abs(), 0.0);
        assert_eq!(g.grad_b.max_abs(), 0.0);
        assert_eq!(g.grad_x.max_abs(), 0.0);
    }

    #[test]
    fn scalar_case() {
        let x = Matrix::column(&[3.0]).unwrap();
        let w = Matrix::column(&[2.0]).unwrap();
        let g = linear_backward(&Matrix::column(&[1.0]).unwrap(), &x, &w).unwrap();
        assert_eq!(g.grad_w[(0, 0)], 3.0);
        assert_eq!(g.grad_x[(0, 0)], 2.0);
        assert_eq!(g.grad_b[(0, 0)], 1.0);
    }

    // Scalar loss 0.5·Σ(wx+b)² so that grad_out = wx+b.
    fn loss(x: &Matrix, w: &Matrix, b: &Matrix) -> f64 {
        let y = linear_forward(x, w, b).unwrap();
        0.5 * y.as_slice().iter().map(|v| v * v).sum::<f64>()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(3);
        let x = gaussian_sample(&mut rng, 4, 4, 0.0, 1.0).unwrap();
        let w = gaussian_sample(&mut rng, 4, 4, 0.0, 1.0).unwrap();
        let b = gaussian_sample(&mut rng, 4, 1, 0.0, 1.0).unwrap();
        let out = linear_forward(&x, &w, &b).unwrap();
        let g = linear_backward(&out, &x, &w).unwrap();
        let h = 1e-5;

        let mut worst: f64 = 0.0;
        for idx in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.as_mut_slice()[idx] += h;
            wm.as_mut_slice()[idx] -= h;
            let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
            worst = worst.max(rel_err(fd, g.grad_w.as_slice()[idx]));
        }
        for idx in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp.as_mut_slice()[idx] += h;
            bm.as_mut_slice()[idx] -= h;
            let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            worst = worst.max(rel_err(fd, g.grad_b.as_slice()[idx]));
        }
        for idx in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[idx] += h;
            xm.as_mut_slice()[idx] -= h;
            let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
            worst = worst.max(rel_err(fd, g.grad_x.as_slice()[idx]));
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }
}
