use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Matrix;
use crate::error::{Error, Result};

/// What a derived stream is used for. Each purpose gets its own ChaCha
/// stream so that, e.g., turning noise off never shifts batch sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Partition = 3,
    Batch = 4,
    Noise = 5,
    Eval = 6,
}

/// Seeded ChaCha20 generator with deterministic substreams.
///
/// A substream is keyed by the root seed and selected by a 64-bit stream id
/// mixed from `(purpose, node, round)`, so it depends on nothing but those
/// values: nodes may run in any order or on any thread.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for `(purpose, node, round)`. Does not advance `self`.
    pub fn substream(&self, purpose: Purpose, node: u64, round: u64) -> Rng {
        let mut id = splitmix64(purpose as u64);
        id = splitmix64(id ^ node);
        id = splitmix64(id ^ round.rotate_left(32));
        let mut inner = ChaCha20Rng::seed_from_u64(self.seed);
        inner.set_stream(id);
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.inner, 0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n}");
        // Partial Fisher-Yates.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// I.i.d. `N(mean, std²)` entries. `std == 0` yields the constant matrix
/// without touching the generator.
pub fn gaussian_sample(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::param("std", format!("must be finite and >= 0, got {std}")));
    }
    if !mean.is_finite() {
        return Err(Error::param("mean", format!("must be finite, got {mean}")));
    }
    if std == 0.0 {
        return Ok(Matrix::filled(rows, cols, mean));
    }
    let data = (0..rows * cols)
        .map(|_| mean + std * rng.standard_normal())
        .collect();
    Matrix::from_vec(rows, cols, data)
}
