//! Structured results behind the command-line tool: calibration, privacy
//! accounting, the overhead ledger, and the on-disk artifacts of a run.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::federation::{run, write_jsonl, write_summary_csv, RunOutput, TrainedModel};
use crate::ledger::{
    attention_param_count, lora_overhead, reduction_ratio, reported_llama_overheads, AttentionCount, ModelShape,
    OverheadReport, ReportedOverhead,
};
use crate::lora::{lora_param_count, write_checkpoint};
use crate::privacy::{
    max_lambda, moments_epsilon, sequential_epsilon, sigma_calibrate_formula, sigma_calibrate_numeric, Accountant,
    CalibrationMode, PrivacyParams, PrivacySpent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub mode: CalibrationMode,
    /// ε the moments accountant certifies at `sigma`, when it applies.
    pub achieved_epsilon: Option<f64>,
    pub lambda_star: Option<u32>,
    pub accountant: Accountant,
    pub regime_valid: bool,
    pub warnings: Vec<String>,
}

/// Calibrates σ for a target ε and reports what the accountant certifies
/// at the result.
pub fn calibrate(p: &PrivacyParams, mode: CalibrationMode) -> Result<CalibrationReport> {
    let sigma = match mode {
        CalibrationMode::Numeric => sigma_calibrate_numeric(p.epsilon, p.delta, p.q, p.t_rounds, p.rho_bar)?,
        m => sigma_calibrate_formula(p, m)?,
    };
    let at = PrivacyParams { sigma, ..*p };
    let spent = moments_epsilon(&at).ok();
    let mut warnings = at.warnings();
    if spent.is_none() {
        warnings.push(format!("moments bound does not apply at sigma = {sigma}"));
    }
    Ok(CalibrationReport {
        epsilon: p.epsilon,
        delta: p.delta,
        sigma,
        mode,
        achieved_epsilon: spent.map(|s| s.epsilon),
        lambda_star: spent.and_then(|s| s.lambda_star),
        accountant: Accountant::Moments,
        regime_valid: at.moments_regime_valid(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountReport {
    pub sigma: f64,
    pub q: f64,
    pub rounds: u64,
    pub delta: f64,
    pub rho_bar: f64,
    pub max_lambda: Option<u32>,
    pub moments: Option<PrivacySpent>,
    /// Why the moments bound was not applied, if it was not.
    pub moments_inapplicable: Option<String>,
    pub sequential: PrivacySpent,
    pub warnings: Vec<String>,
}

/// ε spent after `t_rounds` steps under both accountants.
pub fn account(p: &PrivacyParams) -> Result<AccountReport> {
    let sequential = sequential_epsilon(p.sigma, p.delta, p.t_rounds, p.t_rounds)?;
    let (moments, moments_inapplicable) = match moments_epsilon(p) {
        Ok(s) => (Some(s), None),
        Err(Error::Inapplicable(why)) => (None, Some(why)),
        Err(e) => return Err(e),
    };
    Ok(AccountReport {
        sigma: p.sigma,
        q: p.q,
        rounds: p.t_rounds,
        delta: p.delta,
        rho_bar: p.rho_bar,
        max_lambda: max_lambda(p.q, p.sigma, p.rho_bar).ok(),
        moments,
        moments_inapplicable,
        sequential,
        warnings: p.warnings(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadSummary {
    pub shape: ModelShape,
    pub rank: u64,
    pub nodes: u64,
    pub rounds: u64,
    /// Dense parameters in the adapted projections.
    pub attention: AttentionCount,
    /// Adapter parameters for one `n × n` matrix.
    pub per_matrix_adapted: u64,
    pub per_matrix_dense: u64,
    /// `T × K × r × 2n`: one adapted matrix over the whole run.
    pub single_matrix_run: OverheadReport,
    /// Every adapted projection in every block over the whole run.
    pub model_run: OverheadReport,
    /// Per-round adapter upload over the dense model size, in percent.
    pub adapted_percent_of_dense: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reported: Option<Vec<ReportedOverhead>>,
}

pub fn overhead(shape: &ModelShape, rank: u64, nodes: u64, rounds: u64, with_reported: bool) -> Result<OverheadSummary> {
    let attention = attention_param_count(shape)?;
    let matrices = shape.layers * shape.projections_per_layer;
    let model_run = lora_overhead(rounds, nodes, matrices, rank, shape.width)?;
    Ok(OverheadSummary {
        shape: *shape,
        rank,
        nodes,
        rounds,
        attention,
        per_matrix_adapted: lora_param_count(1, shape.width, rank)?,
        per_matrix_dense: shape.width * shape.width,
        single_matrix_run: lora_overhead(rounds, nodes, 1, rank, shape.width)?,
        adapted_percent_of_dense: reduction_ratio(model_run.per_round_per_node, shape.dense_total).ok(),
        model_run,
        reported: with_reported.then(reported_llama_overheads),
    })
}

/// Files a training run leaves in its output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    /// Written for adapter runs only.
    pub checkpoint: Option<PathBuf>,
}

/// Runs `cfg` and writes `metrics.jsonl`, `summary.csv`, `config.toml` and
/// (for adapter runs) `checkpoint.bin` into `cfg.output_dir`.
pub fn train(cfg: &TrainConfig) -> Result<(RunOutput, Artifacts)> {
    let out = run(cfg)?;
    let files = write_artifacts(&cfg.output_dir, cfg, &out)?;
    Ok((out, files))
}

pub fn write_artifacts(dir: &Path, cfg: &TrainConfig, out: &RunOutput) -> Result<Artifacts> {
    fs::create_dir_all(dir)?;
    let files = Artifacts {
        metrics: dir.join("metrics.jsonl"),
        summary: dir.join("summary.csv"),
        config: dir.join("config.toml"),
        checkpoint: matches!(out.model, TrainedModel::Lora(_)).then(|| dir.join("checkpoint.bin")),
    };
    write_jsonl(BufWriter::new(fs::File::create(&files.metrics)?), &out.records)?;
    write_summary_csv(fs::File::create(&files.summary)?, &[out.summary(cfg)])?;
    fs::write(&files.config, cfg.to_toml())?;
    if let (TrainedModel::Lora(model), Some(path)) = (&out.model, &files.checkpoint) {
        let mut w = BufWriter::new(fs::File::create(path)?);
        write_checkpoint(&mut w, model, cfg.seed)?;
        std::io::Write::flush(&mut w)?;
    }
    Ok(files)
}
