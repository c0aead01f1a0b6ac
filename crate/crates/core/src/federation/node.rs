use crate::config::{ClipMode, NoiseTarget, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::lora::{AdapterGrad, AdapterSet, LoraModel};
use crate::numerics::{gaussian_sample, Matrix, Purpose, Rng};
use crate::privacy::{clip_global, clip_gradient, gaussian_mechanism};

/// Hyper-parameters of one node's local update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `+∞` disables clipping.
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub sigma: f64,
    pub noise_target: NoiseTarget,
    pub local_steps: usize,
}

impl LocalConfig {
    pub fn from_train(cfg: &TrainConfig, sigma: f64) -> Self {
        Self {
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            clip: cfg.clip,
            clip_mode: cfg.clip_mode,
            sigma,
            noise_target: cfg.noise_target,
            local_steps: cfg.local_steps,
        }
    }
}

/// One simulated participant: its private shard, aggregation weight and
/// working copy of the model.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    shard: Dataset,
    pub rho: f64,
    pub local_model: LoraModel,
    root: Rng,
}

impl NodeState {
    /// `root` is the run's root generator; the node only ever draws from
    /// substreams keyed by its own id.
    pub fn new(node_id: usize, shard: Dataset, rho: f64, local_model: LoraModel, root: &Rng) -> Self {
        Self {
            node_id,
            shard,
            rho,
            local_model,
            root: root.clone(),
        }
    }

    pub fn n_k(&self) -> usize {
        self.shard.len()
    }

    pub fn shard(&self) -> &Dataset {
        &self.shard
    }

    /// Batch-sampling stream for local step `step` of `round`.
    pub fn batch_stream(&self, round: usize, step: usize, local_steps: usize) -> Rng {
        let tick = (round * local_steps + step) as u64;
        self.root.substream(Purpose::Batch, self.node_id as u64, tick)
    }

    /// Noise stream for local step `step` of `round`. Separate from the
    /// batch stream so that noise never changes which samples are drawn.
    pub fn noise_stream(&self, round: usize, step: usize, local_steps: usize) -> Rng {
        let tick = (round * local_steps + step) as u64;
        self.root.substream(Purpose::Noise, self.node_id as u64, tick)
    }

    /// Draws `batch_size` distinct samples from the shard.
    pub fn sample_batch(&self, rng: &mut Rng, batch_size: usize) -> Result<(Matrix, Vec<usize>)> {
        if self.shard.len() < batch_size {
            return Err(Error::Config(format!(
                "node {} holds {} samples, fewer than batch_size {batch_size}",
                self.node_id,
                self.shard.len()
            )));
        }
        let idx = rng.sample_without_replacement(self.shard.len(), batch_size);
        let batch = self.shard.subset(&idx);
        Ok((batch.inputs().clone(), batch.labels().to_vec()))
    }
}

/// Copies the global adapters into every node. Bases are never touched.
pub fn broadcast(global: &LoraModel, nodes: &mut [NodeState]) -> Result<()> {
    let adapters = global.adapters();
    for node in nodes.iter_mut() {
        if !node.local_model.frozen_bit_eq(global) {
            return Err(Error::Protocol(format!(
                "node {} holds different frozen weights than the server",
                node.node_id
            )));
        }
        node.local_model.set_adapters(&adapters)?;
    }
    Ok(())
}

pub(crate) fn clip_all(grads: Vec<AdapterGrad>, c: f64, mode: ClipMode) -> Result<Vec<AdapterGrad>> {
    if c.is_infinite() {
        return Ok(grads);
    }
    match mode {
        ClipMode::PerMatrix => grads
            .into_iter()
            .map(|g| {
                Ok(AdapterGrad {
                    g_a: clip_gradient(&g.g_a, c)?,
                    g_b: clip_gradient(&g.g_b, c)?,
                })
            })
            .collect(),
        ClipMode::Global => {
            let flat: Vec<Matrix> = grads.into_iter().flat_map(|g| [g.g_a, g.g_b]).collect();
            let clipped = clip_global(&flat, c)?;
            Ok(clipped
                .chunks_exact(2)
                .map(|p| AdapterGrad {
                    g_a: p[0].clone(),
                    g_b: p[1].clone(),
                })
                .collect())
        }
    }
}

/// The local update of one node for one round.
///
/// Per local step: sample a batch of `B` → adapter gradients → clip each
/// with `C` → add `N(0, σ²C²)` to each → descend with rate `γ`. Returns the
/// node's updated adapters; its model's bases are untouched.
pub fn node_update(node: &mut NodeState, cfg: &LocalConfig, round: usize) -> Result<AdapterSet> {
    if cfg.sigma > 0.0 && cfg.clip.is_infinite() {
        return Err(Error::Config("noise requires a finite clipping bound".into()));
    }
    for step in 0..cfg.local_steps {
        let mut batch_rng = node.batch_stream(round, step, cfg.local_steps);
        let (x, labels) = node.sample_batch(&mut batch_rng, cfg.batch_size)?;
        let (_, grads) = node.local_model.gradients(&x, &labels)?;
        let grads = clip_all(grads, cfg.clip, cfg.clip_mode)?;
        let mut noise = node.noise_stream(round, step, cfg.local_steps);
        match cfg.noise_target {
            NoiseTarget::Gradient => {
                let noised = grads
                    .iter()
                    .map(|g| {
                        Ok(AdapterGrad {
                            g_a: gaussian_mechanism(&g.g_a, cfg.sigma, cfg.clip, &mut noise)?,
                            g_b: gaussian_mechanism(&g.g_b, cfg.sigma, cfg.clip, &mut noise)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                node.local_model.apply_gradients(&noised, cfg.learning_rate)?;
            }
            NoiseTarget::Weights => {
                node.local_model.apply_gradients(&grads, cfg.learning_rate)?;
                if cfg.sigma > 0.0 {
                    let std = cfg.sigma * cfg.clip;
                    let perturb: Vec<AdapterGrad> = node
                        .local_model
                        .adapters()
                        .iter()
                        .map(|ad| {
                            Ok(AdapterGrad {
                                g_a: gaussian_sample(&mut noise, ad.a().rows(), ad.a().cols(), 0.0, std)?,
                                g_b: gaussian_sample(&mut noise, ad.b().rows(), ad.b().cols(), 0.0, std)?,
                            })
                        })
                        .collect::<Result<_>>()?;
                    // Adding noise is a unit step along the negated sample.
                    node.local_model.apply_gradients(&perturb, -1.0)?;
                }
            }
        }
    }
    Ok(node.local_model.adapters())
}
