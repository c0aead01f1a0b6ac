//! Simulated server and nodes: broadcast, private local updates,
//! weighted aggregation and per-round bookkeeping.

mod aggregate;
mod metrics;
mod node;
mod run;

pub use aggregate::{aggregate, aggregate_dense, weighted_sum};
pub use metrics::{read_jsonl, read_summary_csv, write_jsonl, write_summary_csv, RoundRecord, RunSummary};
pub use node::{broadcast, node_update, LocalConfig, NodeState};
pub use run::{
    privacy_after, run, run_fedavg_baseline, run_federated, run_federated_with, RunMode, RunOutput, Setup,
    TrainedModel,
};

impl RunOutput {
    /// The last record, if any round ran.
    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    pub fn summary(&self, cfg: &crate::config::TrainConfig) -> RunSummary {
        let last = self.records.last();
        RunSummary {
            mode: match self.mode {
                RunMode::DpLora => "dp-lora".into(),
                RunMode::Fedavg => "fedavg".into(),
            },
            nodes: cfg.nodes,
            rounds: self.records.len(),
            rank: cfg.model.rank,
            sigma: self.sigma,
            q: self.q,
            rho_bar: self.rho_bar,
            final_loss: last.map_or(f64::NAN, |r| r.loss),
            final_acc: last.map_or(f64::NAN, |r| r.acc),
            eps_spent: last.and_then(|r| r.eps_spent),
            delta: cfg.delta,
            upload_params_per_node: last.map_or(0, |r| r.upload_params.first().copied().unwrap_or(0)),
            total_bytes_up: self.records.iter().map(|r| r.bytes_up).sum(),
            total_bytes_down: self.records.iter().map(|r| r.bytes_down).sum(),
        }
    }
}
