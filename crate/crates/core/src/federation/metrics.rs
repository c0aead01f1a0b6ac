use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{Accountant, PrivacySpent};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub loss: f64,
    pub acc: f64,
    /// `None` when no noise is added or the bound does not apply.
    pub eps_spent: Option<f64>,
    pub delta: f64,
    pub accountant: Accountant,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub upload_params: Vec<u64>,
}

impl RoundRecord {
    pub fn privacy_spent(&self) -> Option<PrivacySpent> {
        self.eps_spent.map(|epsilon| PrivacySpent {
            epsilon,
            delta: self.delta,
            accountant: self.accountant,
            lambda_star: None,
        })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[RoundRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<RoundRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub nodes: usize,
    pub rounds: usize,
    pub rank: usize,
    pub sigma: f64,
    pub q: f64,
    pub rho_bar: f64,
    pub final_loss: f64,
    pub final_acc: f64,
    pub eps_spent: Option<f64>,
    pub delta: f64,
    pub upload_params_per_node: u64,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[RunSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: std::io::Read>(r: R) -> Result<Vec<RunSummary>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}
