//! Synthetic classification tasks and their partitioning across nodes.

use std::io::{Read, Write};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, read_u64, Matrix, Rng};

/// Labelled samples. `inputs` is `dim × N`, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.cols() != labels.len() {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} samples but {} labels", inputs.cols(), labels.len()),
            ));
        }
        if num_classes == 0 {
            return Err(Error::param("num_classes", "must be >= 1"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::param("labels", format!("label {bad} >= {num_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Writes `(N, dim, num_classes)` as little-endian `u64`, the inputs as
    /// an `N × dim` matrix, then `N` little-endian `u64` labels.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for v in [self.len(), self.dim(), self.num_classes] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        self.inputs.transpose().write_to(w)?;
        for &y in &self.labels {
            w.write_all(&(y as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Dataset> {
        let n = read_u64(r)? as usize;
        let dim = read_u64(r)? as usize;
        let classes = read_u64(r)? as usize;
        let rows = Matrix::read_from(r)?;
        if rows.shape() != (n, dim) {
            return Err(Error::Format(format!(
                "header says {n}x{dim}, matrix is {}x{}",
                rows.rows(),
                rows.cols()
            )));
        }
        let labels = (0..n)
            .map(|_| read_u64(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(rows.transpose(), labels, classes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Gaussian clusters with unit spread around class means of length
/// `margin`. Sample `i` belongs to class `i mod num_classes`.
///
/// Class means are random unit directions, so the distance between two
/// means grows with `margin`; `margin = 0` gives an unlearnable task.
pub fn make_synthetic(
    seed: u64,
    n_samples: usize,
    dim: usize,
    num_classes: usize,
    margin: f64,
) -> Result<Dataset> {
    if n_samples == 0 || dim == 0 || num_classes == 0 {
        return Err(Error::param(
            "make_synthetic",
            format!("sizes must be positive (n={n_samples}, dim={dim}, classes={num_classes})"),
        ));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::param("margin", format!("must be finite and >= 0, got {margin}")));
    }
    let mut rng = Rng::new(seed);
    let mut means = gaussian_sample(&mut rng, dim, num_classes, 0.0, 1.0)?;
    for c in 0..num_classes {
        let norm = means.col_vec(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..dim {
            means[(i, c)] *= margin / norm.max(f64::MIN_POSITIVE);
        }
    }
    let mut inputs = gaussian_sample(&mut rng, dim, n_samples, 0.0, 1.0)?;
    let labels: Vec<usize> = (0..n_samples).map(|i| i % num_classes).collect();
    for (j, &y) in labels.iter().enumerate() {
        for i in 0..dim {
            inputs[(i, j)] += means[(i, y)];
        }
    }
    Dataset::new(inputs, labels, num_classes)
}

/// How samples are dealt out to nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PartitionMode {
    /// Contiguous blocks of a seeded shuffle; sizes differ by at most one.
    #[default]
    Even,
    /// Shard proportions drawn from a symmetric Dirichlet(α); every node
    /// receives at least one sample.
    Dirichlet { alpha: f64 },
}

/// Disjoint index sets covering a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    pub mode: PartitionMode,
    total: usize,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// `ρ_k = N_k / N`.
    pub fn weights(&self) -> Vec<f64> {
        self.shards
            .iter()
            .map(|s| s.len() as f64 / self.total as f64)
            .collect()
    }

    pub fn shard(&self, data: &Dataset, k: usize) -> Dataset {
        data.subset(&self.shards[k])
    }
}

pub fn partition(data: &Dataset, k: usize, mode: PartitionMode, rng: &mut Rng) -> Result<Partition> {
    let n = data.len();
    if k == 0 {
        return Err(Error::param("nodes", "need at least one node"));
    }
    if k > n {
        return Err(Error::param("nodes", format!("{k} nodes for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let sizes = match mode {
        PartitionMode::Even => (0..k).map(|i| n / k + usize::from(i < n % k)).collect(),
        PartitionMode::Dirichlet { alpha } => dirichlet_sizes(n, k, alpha, rng)?,
    };
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for size in sizes {
        shards.push(order[start..start + size].to_vec());
        start += size;
    }
    debug_assert_eq!(start, n);
    Ok(Partition {
        shards,
        mode,
        total: n,
    })
}

fn dirichlet_sizes(n: usize, k: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("dirichlet_alpha", format!("must be > 0, got {alpha}")));
    }
    if k == 1 {
        return Ok(vec![n]);
    }
    // Normalised Gamma(α, 1) draws are Dirichlet(α, ..., α).
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::param("dirichlet_alpha", e.to_string()))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let props: Vec<f64> = if total > 0.0 {
        draws.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    // One sample each, the rest by largest remainder.
    let spare = n - k;
    let raw: Vec<f64> = props.iter().map(|p| p * spare as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut left = spare - sizes.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..k).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes.into_iter().map(|s| s + 1).collect())
}
