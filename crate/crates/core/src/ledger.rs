//! Exact integer accounting of trainable parameters and of what is sent
//! over the wire during federated training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::lora_param_count;

/// Dense parameter count of Llama-7B.
pub const LLAMA_7B_TOTAL: u64 = 6_738_411_520;

/// Shape of the transformer whose attention projections get adapted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: u64,
    pub width: u64,
    /// Square projections adapted per block (3 for Q, K and V).
    pub projections_per_layer: u64,
    pub dense_total: u64,
}

impl ModelShape {
    pub fn llama_7b() -> Self {
        Self {
            layers: 32,
            width: 4096,
            projections_per_layer: 3,
            dense_total: LLAMA_7B_TOTAL,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.projections_per_layer == 0 || self.dense_total == 0 {
            return Err(Error::param("shape", format!("all fields must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn mul(values: &[u64]) -> Result<u64> {
    values
        .iter()
        .try_fold(1u64, |acc, &v| acc.checked_mul(v))
        .ok_or_else(|| Error::param("count", format!("product of {values:?} overflows u64")))
}

/// Parameters in the adapted attention projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionCount {
    pub per_block: u64,
    pub total: u64,
}

/// `n² · projections` per block, times `L` blocks.
pub fn attention_param_count(shape: &ModelShape) -> Result<AttentionCount> {
    shape.validate()?;
    let per_block = mul(&[shape.width, shape.width, shape.projections_per_layer])?;
    Ok(AttentionCount {
        per_block,
        total: mul(&[per_block, shape.layers])?,
    })
}

/// Communication volume of a training run, counted in parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// `L · r · 2n`, what one node uploads in one round.
    pub per_round_per_node: u64,
    /// `T · K · per_round_per_node`.
    pub total: u64,
    /// Same run transmitting the dense weights instead.
    pub baseline_total: u64,
    /// `total / baseline_total`. Exceeds 1 once `r > n/2`.
    pub reduction_ratio: f64,
}

/// `T × K × L × r × 2n`, against a dense baseline of `T × K × L × n²`.
pub fn lora_overhead(t: u64, k: u64, l: u64, r: u64, n: u64) -> Result<OverheadReport> {
    if t == 0 || k == 0 {
        return Err(Error::param("lora_overhead", format!("T and K must be positive (T={t}, K={k})")));
    }
    let per = lora_param_count(l, n, r)?;
    let baseline_per = mul(&[l, n, n])?;
    overhead_against(t, k, per, baseline_per)
}

/// Overhead of sending `per_round_per_node` parameters against a baseline
/// that sends `baseline_per_node` per node per round.
pub fn overhead_against(t: u64, k: u64, per_round_per_node: u64, baseline_per_node: u64) -> Result<OverheadReport> {
    let total = mul(&[t, k, per_round_per_node])?;
    let baseline_total = mul(&[t, k, baseline_per_node])?;
    if baseline_total == 0 {
        return Err(Error::param("baseline", "must be positive"));
    }
    Ok(OverheadReport {
        per_round_per_node,
        total,
        baseline_total,
        reduction_ratio: total as f64 / baseline_total as f64,
    })
}

/// `adapted / dense_total` in percent.
pub fn reduction_ratio(adapted: u64, dense_total: u64) -> Result<f64> {
    if adapted == 0 || adapted > dense_total {
        return Err(Error::param(
            "reduction_ratio",
            format!("need 0 < adapted <= dense_total, got {adapted} / {dense_total}"),
        ));
    }
    Ok(100.0 * adapted as f64 / dense_total as f64)
}

/// Wire size of `count` parameters at `bytes_per_element` (4 or 8).
pub fn bytes_on_wire(count: u64, bytes_per_element: u64) -> Result<u64> {
    if bytes_per_element != 4 && bytes_per_element != 8 {
        return Err(Error::param(
            "bytes_per_element",
            format!("must be 4 or 8, got {bytes_per_element}"),
        ));
    }
    mul(&[count, bytes_per_element])
}

/// A published overhead figure for Llama-7B at some rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedOverhead {
    pub rank: u64,
    pub reported_params: f64,
    pub reported_ratio_percent: f64,
    /// `reported_params / 6.7e9`, recomputed here.
    pub recomputed_ratio_percent: f64,
    /// What `T × K × L × r × 2n` gives per round and node for the Llama
    /// shape (Q, K, V in all 32 blocks). The published counts do not follow
    /// from it.
    pub formula_params: u64,
    pub provenance: &'static str,
}

/// Published Llama-7B overhead rows with the ratio arithmetic redone.
pub fn reported_llama_overheads() -> Vec<ReportedOverhead> {
    const ROWS: [(u64, f64, f64); 5] = [
        (1024, 2.43e9, 36.27),
        (512, 1.35e9, 20.15),
        (256, 0.93e9, 13.88),
        (128, 0.65e9, 9.70),
        (64, 0.49e9, 7.31),
    ];
    let shape = ModelShape::llama_7b();
    ROWS.iter()
        .map(|&(rank, params, ratio)| ReportedOverhead {
            rank,
            reported_params: params,
            reported_ratio_percent: ratio,
            recomputed_ratio_percent: 100.0 * params / 6.7e9,
            formula_params: lora_param_count(shape.layers * shape.projections_per_layer, shape.width, rank)
                .expect("fits in u64"),
            provenance: "reported, not derived",
        })
        .collect()
}
