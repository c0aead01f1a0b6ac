use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, Matrix, Rng};

/// Low-rank factor pair `(A: n×r, B: r×n)` whose product `A·B` is added to
/// a frozen `n×n` base matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    a: Matrix,
    b: Matrix,
}

impl LoraAdapter {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let (n, r) = a.shape();
        if b.shape() != (r, n) {
            return Err(Error::shape(
                "LoraAdapter::new",
                format!("A is {n}x{r} so B must be {r}x{n}, got {}x{}", b.rows(), b.cols()),
            ));
        }
        if r == 0 || r > n {
            return Err(Error::param("rank", format!("need 1 <= r <= n, got r={r}, n={n}")));
        }
        Ok(Self { a, b })
    }

    /// `A ~ N(0, 1/r)`, `B = 0`: the adapted layer starts out identical to
    /// its base.
    pub fn init(n: usize, r: usize, rng: &mut Rng) -> Result<Self> {
        if r == 0 || r > n {
            return Err(Error::param("rank", format!("need 1 <= r <= n, got r={r}, n={n}")));
        }
        let a = gaussian_sample(rng, n, r, 0.0, (1.0 / r as f64).sqrt())?;
        Self::new(a, Matrix::zeros(r, n))
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn width(&self) -> usize {
        self.a.rows()
    }

    /// Number of scalars in `A` and `B` together, `2·n·r`.
    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// The dense update `A·B`.
    pub fn delta(&self) -> Matrix {
        self.a.matmul(&self.b).expect("adapter shapes are validated")
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    pub fn same_shape(&self, other: &LoraAdapter) -> bool {
        self.a.shape() == other.a.shape() && self.b.shape() == other.b.shape()
    }

    pub fn bit_eq(&self, other: &LoraAdapter) -> bool {
        self.a.bit_eq(&other.a) && self.b.bit_eq(&other.b)
    }
}

/// Counts transmitted adapter parameters for `layers` adapted matrices of
/// width `n` at rank `r`: `L · 2 · n · r`.
pub fn lora_param_count(layers: u64, n: u64, r: u64) -> Result<u64> {
    if layers == 0 || n == 0 || r == 0 {
        return Err(Error::param(
            "lora_param_count",
            format!("all arguments must be positive (L={layers}, n={n}, r={r})"),
        ));
    }
    layers
        .checked_mul(2)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(r))
        .ok_or_else(|| Error::param("lora_param_count", "overflows u64"))
}
