use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, aggregate_dense};
use super::metrics::RoundRecord;
use super::node::{broadcast, node_update, LocalConfig, NodeState};
use crate::config::{NoiseSpec, TrainConfig};
use crate::datagen::{make_synthetic, partition, Dataset, Partition};
use crate::error::{Error, Result};
use crate::ledger::bytes_on_wire;
use crate::lora::{DenseModel, LoraModel};
use crate::numerics::{Matrix, Purpose, Rng};
use crate::privacy::{
    moments_epsilon, rho_bar, sequential_epsilon, sigma_calibrate_formula, sigma_calibrate_numeric,
    Accountant, CalibrationMode, PrivacyParams, PrivacySpent,
};

/// Which protocol produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    DpLora,
    Fedavg,
}

/// Model held by the server after the last round.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Lora(LoraModel),
    Dense(DenseModel),
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: RunMode,
    pub records: Vec<RoundRecord>,
    pub model: TrainedModel,
    /// Frozen-weight model the run started from.
    pub initial: LoraModel,
    pub sigma: f64,
    pub weights: Vec<f64>,
    pub rho_bar: f64,
    /// Largest per-node sampling probability `B / N_k`.
    pub q: f64,
    pub warnings: Vec<String>,
}

/// Data, shards, weights and the initial model derived from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub root: Rng,
    pub data: Dataset,
    pub partition: Partition,
    pub weights: Vec<f64>,
    pub rho_bar: f64,
    pub q: f64,
    pub sigma: f64,
    pub model: LoraModel,
    pub warnings: Vec<String>,
}

impl Setup {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let data_seed = rand::RngCore::next_u64(&mut root.substream(Purpose::Data, 0, 0));
        let data = make_synthetic(
            data_seed,
            cfg.data.samples,
            cfg.model.width,
            cfg.model.num_classes,
            cfg.data.margin,
        )?;
        let mut part_rng = root.substream(Purpose::Partition, 0, 0);
        let partition = partition(&data, cfg.nodes, cfg.data.partition, &mut part_rng)?;
        if let Some((k, n)) = partition
            .sizes()
            .into_iter()
            .enumerate()
            .find(|&(_, n)| n < cfg.batch_size)
        {
            return Err(Error::Config(format!(
                "`batch_size`: node {k} holds {n} samples, fewer than {}",
                cfg.batch_size
            )));
        }
        let weights = cfg.rho_override.clone().unwrap_or_else(|| partition.weights());
        let rho_bar = rho_bar(&weights)?;
        let min_shard = partition.sizes().into_iter().min().expect("nodes >= 1");
        let q = cfg.batch_size as f64 / min_shard as f64;
        let steps = (cfg.rounds * cfg.local_steps) as u64;

        let mut warnings = Vec::new();
        if cfg.local_steps > 1 {
            warnings.push(format!(
                "local_steps = {} takes several noisy steps per round; accounting composes all {steps} steps",
                cfg.local_steps
            ));
        }
        let sigma = match cfg.noise {
            NoiseSpec::Sigma(s) => s,
            NoiseSpec::TargetEpsilon(eps) => match cfg.calibration {
                CalibrationMode::Numeric => sigma_calibrate_numeric(eps, cfg.delta, q, steps, rho_bar)?,
                mode => sigma_calibrate_formula(
                    &PrivacyParams {
                        epsilon: eps,
                        delta: cfg.delta,
                        q,
                        t_rounds: steps,
                        rho_bar,
                        c2: cfg.c2,
                        clip_c: cfg.clip,
                        sigma: 0.0,
                        c1: cfg.c1,
                    },
                    mode,
                )?,
            },
        };
        if sigma > 0.0 && cfg.clip.is_infinite() {
            return Err(Error::Config("`clip`: must be finite when noise is added".into()));
        }
        let model = LoraModel::init(&cfg.model, &root)?;
        Ok(Self {
            root,
            data,
            partition,
            weights,
            rho_bar,
            q,
            sigma,
            model,
            warnings,
        })
    }

    pub fn privacy_params(&self, cfg: &TrainConfig) -> PrivacyParams {
        PrivacyParams {
            epsilon: match cfg.noise {
                NoiseSpec::TargetEpsilon(e) => e,
                NoiseSpec::Sigma(_) => f64::NAN,
            },
            delta: cfg.delta,
            sigma: self.sigma,
            clip_c: cfg.clip,
            q: self.q,
            t_rounds: (cfg.rounds * cfg.local_steps) as u64,
            rho_bar: self.rho_bar,
            c2: cfg.c2,
            c1: cfg.c1,
        }
    }
}

/// Privacy spent after `steps` noisy steps, or `None` when nothing can be
/// claimed (no noise, or the moments bound does not apply).
pub fn privacy_after(
    accountant: Accountant,
    p: &PrivacyParams,
    steps: u64,
) -> Result<Option<PrivacySpent>> {
    if p.sigma == 0.0 {
        return Ok(None);
    }
    match accountant {
        Accountant::Moments => match moments_epsilon(&PrivacyParams { t_rounds: steps, ..*p }) {
            Ok(s) => Ok(Some(s)),
            Err(Error::Inapplicable(_)) => Ok(None),
            Err(e) => Err(e),
        },
        Accountant::Sequential => sequential_epsilon(p.sigma, p.delta, steps, p.t_rounds).map(Some),
    }
}

fn pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("`threads`: {e}")))
}

/// Runs the private federated adapter protocol for `cfg.rounds` rounds.
///
/// Each round: broadcast the global adapters, run every node's update
/// (concurrently, each on its own random substreams), then average the
/// uploads in ascending node order. The result does not depend on the
/// number of worker threads.
pub fn run_federated(cfg: &TrainConfig) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    run_federated_with(cfg, setup)
}

/// [`run_federated`] on a prepared [`Setup`].
pub fn run_federated_with(cfg: &TrainConfig, setup: Setup) -> Result<RunOutput> {
    let Setup {
        root,
        data,
        partition,
        weights,
        rho_bar,
        q,
        sigma,
        model,
        mut warnings,
    } = setup;
    let privacy = PrivacyParams {
        sigma,
        q,
        rho_bar,
        delta: cfg.delta,
        clip_c: cfg.clip,
        t_rounds: (cfg.rounds * cfg.local_steps) as u64,
        c2: cfg.c2,
        c1: cfg.c1,
        epsilon: f64::NAN,
    };
    if sigma > 0.0 && cfg.accountant == Accountant::Moments && !privacy.moments_regime_valid() {
        warnings.push(format!(
            "moments bound inapplicable at q = {q}, sigma = {sigma}, rho_bar = {rho_bar}; eps_spent is not reported"
        ));
    }
    let local = LocalConfig::from_train(cfg, sigma);
    let initial = model.clone();
    let mut global = model;
    let mut nodes: Vec<NodeState> = (0..cfg.nodes)
        .map(|k| NodeState::new(k, partition.shard(&data, k), weights[k], global.clone(), &root))
        .collect();

    let upload = global.trainable_param_count() as u64;
    let bytes = bytes_on_wire(upload, cfg.bytes_per_element)? * cfg.nodes as u64;
    let workers = pool(cfg.worker_threads())?;
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let mut round = || -> Result<RoundRecord> {
            broadcast(&global, &mut nodes)?;
            let uploads = workers.install(|| {
                nodes
                    .par_iter_mut()
                    .map(|node| node_update(node, &local, t))
                    .collect::<Result<Vec<_>>>()
            })?;
            global.set_adapters(&aggregate(&uploads, &weights)?)?;
            let (loss, acc) = global.evaluate(data.inputs(), data.labels())?;
            let spent = privacy_after(cfg.accountant, &privacy, ((t + 1) * cfg.local_steps) as u64)?;
            Ok(RoundRecord {
                t,
                loss,
                acc,
                eps_spent: spent.map(|s| s.epsilon),
                delta: cfg.delta,
                accountant: cfg.accountant,
                bytes_up: bytes,
                bytes_down: bytes,
                upload_params: vec![upload; cfg.nodes],
            })
        };
        records.push(round().map_err(|e| Error::Round {
            round: t,
            source: Box::new(e),
        })?);
    }
    // Final evaluation happens on the aggregate, so push it to the nodes too.
    broadcast(&global, &mut nodes)?;

    Ok(RunOutput {
        mode: RunMode::DpLora,
        records,
        model: TrainedModel::Lora(global),
        initial,
        sigma,
        weights,
        rho_bar,
        q,
        warnings,
    })
}

struct DenseNode {
    id: usize,
    shard: NodeState,
    model: DenseModel,
}

/// Full-parameter federated averaging without adapters or noise.
///
/// Starts from the same frozen network as [`run_federated`] with every
/// square weight trainable, samples the same batches, and uploads all
/// weights each round.
pub fn run_fedavg_baseline(cfg: &TrainConfig) -> Result<RunOutput> {
    let Setup {
        root,
        data,
        partition,
        weights,
        rho_bar,
        q,
        model,
        ..
    } = Setup::new(cfg)?;
    let initial = model.clone();
    let mut global = model.densify();
    let mut nodes: Vec<DenseNode> = (0..cfg.nodes)
        .map(|k| DenseNode {
            id: k,
            shard: NodeState::new(k, partition.shard(&data, k), weights[k], model.clone(), &root),
            model: global.clone(),
        })
        .collect();

    let upload = global.param_count() as u64;
    let bytes = bytes_on_wire(upload, cfg.bytes_per_element)? * cfg.nodes as u64;
    let workers = pool(cfg.worker_threads())?;
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let mut round = || -> Result<RoundRecord> {
            for node in nodes.iter_mut() {
                node.model.set_weights(global.weights())?;
            }
            let uploads = workers.install(|| {
                nodes
                    .par_iter_mut()
                    .map(|node| dense_update(node, cfg, t))
                    .collect::<Result<Vec<_>>>()
            })?;
            global.set_weights(&aggregate_dense(&uploads, &weights)?)?;
            let (loss, acc) = global.evaluate(data.inputs(), data.labels())?;
            Ok(RoundRecord {
                t,
                loss,
                acc,
                eps_spent: None,
                delta: cfg.delta,
                accountant: cfg.accountant,
                bytes_up: bytes,
                bytes_down: bytes,
                upload_params: vec![upload; cfg.nodes],
            })
        };
        records.push(round().map_err(|e| Error::Round {
            round: t,
            source: Box::new(e),
        })?);
    }

    Ok(RunOutput {
        mode: RunMode::Fedavg,
        records,
        model: TrainedModel::Dense(global),
        initial,
        sigma: 0.0,
        weights,
        rho_bar,
        q,
        warnings: Vec::new(),
    })
}

fn dense_update(node: &mut DenseNode, cfg: &TrainConfig, round: usize) -> Result<Vec<Matrix>> {
    debug_assert_eq!(node.id, node.shard.node_id);
    for step in 0..cfg.local_steps {
        let mut rng = node.shard.batch_stream(round, step, cfg.local_steps);
        let (x, labels) = node.shard.sample_batch(&mut rng, cfg.batch_size)?;
        let (_, grads) = node.model.gradients(&x, &labels)?;
        node.model.apply_gradients(&grads, cfg.learning_rate)?;
    }
    Ok(node.model.weights().to_vec())
}

/// Dispatches on `cfg.baseline`.
pub fn run(cfg: &TrainConfig) -> Result<RunOutput> {
    if cfg.baseline {
        run_fedavg_baseline(cfg)
    } else {
        run_federated(cfg)
    }
}
