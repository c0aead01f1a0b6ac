//! Run configuration: a sectioned TOML file, command-line overrides, and
//! defaults, merged in that order of precedence (flags, then file, then
//! defaults).
//!
//! ```toml
//! seed = 0
//!
//! [federation]
//! nodes = 5
//! rounds = 50
//! local_steps = 1
//! baseline = false
//! threads = 0              # 0: one worker per node
//! bytes_per_element = 8
//! # rho = [0.5, 0.3, 0.2]  # overrides shard-size weights
//!
//! [training]
//! batch_size = 8
//! learning_rate = 5e-4
//!
//! [privacy]
//! clip = 10.0              # `inf` disables clipping
//! clip_mode = "per_matrix" # or "global"
//! noise_target = "gradient" # or "weights"
//! sigma = 2.0              # mutually exclusive with `epsilon`
//! # epsilon = 2.0          # target; sigma is then calibrated
//! delta = 1e-5
//! c2 = 1.0
//! # c1 = 1.0
//! accountant = "moments"   # or "sequential"
//! calibration = "numeric"  # or "theorem", "proof"
//!
//! [model]
//! layers = 1
//! width = 512
//! rank = 512
//! num_classes = 3
//! adapter_scale = 1.0
//! activation = "tanh"
//! base_gain = 1.0
//!
//! [data]
//! samples = 1000
//! margin = 4.0
//! partition = "even"       # or "dirichlet"
//! dirichlet_alpha = 0.5
//!
//! [output]
//! dir = "runs"
//! ```
//!
//! Every key has a command-line flag of the same name with `_` spelled
//! `-` (`--learning-rate`, `--rank`, ...).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::PartitionMode;
use crate::error::{Error, Result};
use crate::lora::{Activation, ModelConfig};
use crate::privacy::{Accountant, CalibrationMode};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DPLORA_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Each `g_A` and `g_B` of each layer is clipped to `C` on its own.
    #[default]
    PerMatrix,
    /// All adapter gradients of a step share one norm bound `C`.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// Noise is added to the clipped gradient before the descent step.
    #[default]
    Gradient,
    /// Noise is added to the updated `A_k`, `B_k` after a clean step.
    Weights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    #[default]
    Even,
    Dirichlet,
}

/// How the noise multiplier is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    Sigma(f64),
    /// Calibrate σ to reach this ε at the configured δ.
    TargetEpsilon(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub nodes: Option<usize>,
    pub rounds: Option<usize>,
    pub local_steps: Option<usize>,
    pub baseline: Option<bool>,
    pub threads: Option<usize>,
    pub bytes_per_element: Option<u64>,
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub clip: Option<f64>,
    pub clip_mode: Option<ClipMode>,
    pub noise_target: Option<NoiseTarget>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub c2: Option<f64>,
    pub c1: Option<f64>,
    pub accountant: Option<Accountant>,
    pub calibration: Option<CalibrationMode>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Option<usize>,
    pub width: Option<usize>,
    pub rank: Option<usize>,
    pub num_classes: Option<usize>,
    pub adapter_scale: Option<f64>,
    pub activation: Option<Activation>,
    pub base_gain: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub samples: Option<usize>,
    pub margin: Option<f64>,
    pub partition: Option<PartitionKind>,
    pub dirichlet_alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A partial configuration: what a file or a set of flags specifies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub seed: Option<u64>,
    pub federation: FederationSection,
    pub training: TrainingSection,
    pub privacy: PrivacySection,
    pub model: ModelSection,
    pub data: DataSection,
    pub output: OutputSection,
}

macro_rules! overlay {
    ($dst:expr, $src:expr; $($field:ident),+) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )+
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &ConfigLayer) -> Self {
        if top.seed.is_some() {
            self.seed = top.seed;
        }
        overlay!(self.federation, top.federation; nodes, rounds, local_steps, baseline, threads, bytes_per_element, rho);
        overlay!(self.training, top.training; batch_size, learning_rate);
        overlay!(self.privacy, top.privacy; clip, clip_mode, noise_target, sigma, epsilon, delta, c2, c1, accountant, calibration);
        overlay!(self.model, top.model; layers, width, rank, num_classes, adapter_scale, activation, base_gain);
        overlay!(self.data, top.data; samples, margin, partition, dirichlet_alpha);
        overlay!(self.output, top.output; dir);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub samples: usize,
    pub margin: f64,
    pub partition: PartitionMode,
}

/// Fully resolved, validated configuration of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub nodes: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub baseline: bool,
    /// Worker threads for node updates; 0 means one per node.
    pub threads: usize,
    pub bytes_per_element: u64,
    pub rho_override: Option<Vec<f64>>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Clipping bound `C`; `+∞` disables clipping.
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub noise_target: NoiseTarget,
    pub noise: NoiseSpec,
    pub delta: f64,
    pub c2: f64,
    pub c1: Option<f64>,
    pub accountant: Accountant,
    pub calibration: CalibrationMode,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::resolve(&ConfigLayer::default()).expect("defaults are valid")
    }
}

fn invalid(key: &str, constraint: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {constraint}"))
}

impl TrainConfig {
    /// Applies defaults to a merged layer and validates the result.
    pub fn resolve(layer: &ConfigLayer) -> Result<Self> {
        let f = &layer.federation;
        let t = &layer.training;
        let p = &layer.privacy;
        let m = &layer.model;
        let d = &layer.data;
        let model_default = ModelConfig::default();

        let noise = match (p.sigma, p.epsilon) {
            (Some(_), Some(_)) => {
                return Err(invalid("sigma", "cannot be combined with `epsilon`; set exactly one"))
            }
            (Some(s), None) => NoiseSpec::Sigma(s),
            (None, Some(e)) => NoiseSpec::TargetEpsilon(e),
            (None, None) => NoiseSpec::Sigma(2.0),
        };
        let partition = match d.partition.unwrap_or_default() {
            PartitionKind::Even => PartitionMode::Even,
            PartitionKind::Dirichlet => PartitionMode::Dirichlet {
                alpha: d.dirichlet_alpha.unwrap_or(0.5),
            },
        };
        let output_dir = layer
            .output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));

        let cfg = TrainConfig {
            seed: layer.seed.unwrap_or(0),
            nodes: f.nodes.unwrap_or(5),
            rounds: f.rounds.unwrap_or(50),
            local_steps: f.local_steps.unwrap_or(1),
            baseline: f.baseline.unwrap_or(false),
            threads: f.threads.unwrap_or(0),
            bytes_per_element: f.bytes_per_element.unwrap_or(8),
            rho_override: f.rho.clone(),
            batch_size: t.batch_size.unwrap_or(8),
            learning_rate: t.learning_rate.unwrap_or(5e-4),
            clip: p.clip.unwrap_or(10.0),
            clip_mode: p.clip_mode.unwrap_or_default(),
            noise_target: p.noise_target.unwrap_or_default(),
            noise,
            delta: p.delta.unwrap_or(1e-5),
            c2: p.c2.unwrap_or(1.0),
            c1: p.c1,
            accountant: p.accountant.unwrap_or_default(),
            calibration: p.calibration.unwrap_or_default(),
            model: ModelConfig {
                layers: m.layers.unwrap_or(model_default.layers),
                width: m.width.unwrap_or(model_default.width),
                rank: m.rank.unwrap_or(model_default.rank),
                num_classes: m.num_classes.unwrap_or(model_default.num_classes),
                adapter_scale: m.adapter_scale.unwrap_or(model_default.adapter_scale),
                activation: m.activation.unwrap_or(model_default.activation),
                base_gain: m.base_gain.unwrap_or(model_default.base_gain),
            },
            data: DataConfig {
                samples: d.samples.unwrap_or(1000),
                margin: d.margin.unwrap_or(4.0),
                partition,
            },
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Merges `flags` over `file` (either may be empty) and resolves.
    pub fn from_sources(file: Option<&str>, flags: &ConfigLayer) -> Result<Self> {
        let base = match file {
            Some(text) => ConfigLayer::from_toml(text)?,
            None => ConfigLayer::default(),
        };
        Self::resolve(&base.overlay(flags))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(invalid(key, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("nodes", self.nodes)?;
        positive("rounds", self.rounds)?;
        positive("local_steps", self.local_steps)?;
        positive("batch_size", self.batch_size)?;
        positive("samples", self.data.samples)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be finite and >= 0"));
        }
        if !(self.clip > 0.0) {
            return Err(invalid("clip", "must be > 0 (use `inf` to disable clipping)"));
        }
        match self.noise {
            NoiseSpec::Sigma(s) if !(s >= 0.0 && s.is_finite()) => {
                return Err(invalid("sigma", "must be finite and >= 0"))
            }
            NoiseSpec::TargetEpsilon(e) if !(e > 0.0 && e.is_finite()) => {
                return Err(invalid("epsilon", "must be finite and > 0"))
            }
            _ => {}
        }
        if self.sigma_is_positive() && self.clip.is_infinite() {
            return Err(invalid("clip", "must be finite when noise is added"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        if !(self.c2 > 0.0) {
            return Err(invalid("c2", "must be > 0"));
        }
        if self.bytes_per_element != 4 && self.bytes_per_element != 8 {
            return Err(invalid("bytes_per_element", "must be 4 or 8"));
        }
        if let PartitionMode::Dirichlet { alpha } = self.data.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(invalid("dirichlet_alpha", "must be > 0"));
            }
        }
        if !(self.data.margin >= 0.0 && self.data.margin.is_finite()) {
            return Err(invalid("margin", "must be finite and >= 0"));
        }
        if let Some(rho) = &self.rho_override {
            if rho.len() != self.nodes {
                return Err(invalid("rho", format!("needs {} entries, got {}", self.nodes, rho.len())));
            }
            crate::privacy::rho_bar(rho).map_err(|e| invalid("rho", e))?;
        }
        if self.nodes > self.data.samples {
            return Err(invalid("nodes", format!("{} nodes for {} samples", self.nodes, self.data.samples)));
        }
        self.model.validate().map_err(|e| match e {
            Error::Parameter { name, reason } => invalid(name, reason),
            other => other,
        })
    }

    fn sigma_is_positive(&self) -> bool {
        match self.noise {
            NoiseSpec::Sigma(s) => s > 0.0,
            NoiseSpec::TargetEpsilon(_) => true,
        }
    }

    /// Worker threads actually used.
    pub fn worker_threads(&self) -> usize {
        if self.threads == 0 {
            self.nodes
        } else {
            self.threads
        }
    }

    /// The fully specified layer that resolves back to `self`.
    pub fn to_layer(&self) -> ConfigLayer {
        let (sigma, epsilon) = match self.noise {
            NoiseSpec::Sigma(s) => (Some(s), None),
            NoiseSpec::TargetEpsilon(e) => (None, Some(e)),
        };
        let (partition, dirichlet_alpha) = match self.data.partition {
            PartitionMode::Even => (PartitionKind::Even, None),
            PartitionMode::Dirichlet { alpha } => (PartitionKind::Dirichlet, Some(alpha)),
        };
        ConfigLayer {
            seed: Some(self.seed),
            federation: FederationSection {
                nodes: Some(self.nodes),
                rounds: Some(self.rounds),
                local_steps: Some(self.local_steps),
                baseline: Some(self.baseline),
                threads: Some(self.threads),
                bytes_per_element: Some(self.bytes_per_element),
                rho: self.rho_override.clone(),
            },
            training: TrainingSection {
                batch_size: Some(self.batch_size),
                learning_rate: Some(self.learning_rate),
            },
            privacy: PrivacySection {
                clip: Some(self.clip),
                clip_mode: Some(self.clip_mode),
                noise_target: Some(self.noise_target),
                sigma,
                epsilon,
                delta: Some(self.delta),
                c2: Some(self.c2),
                c1: self.c1,
                accountant: Some(self.accountant),
                calibration: Some(self.calibration),
            },
            model: ModelSection {
                layers: Some(self.model.layers),
                width: Some(self.model.width),
                rank: Some(self.model.rank),
                num_classes: Some(self.model.num_classes),
                adapter_scale: Some(self.model.adapter_scale),
                activation: Some(self.model.activation),
                base_gain: Some(self.model.base_gain),
            },
            data: DataSection {
                samples: Some(self.data.samples),
                margin: Some(self.data.margin),
                partition: Some(partition),
                dirichlet_alpha,
            },
            output: OutputSection {
                dir: Some(self.output_dir.clone()),
            },
        }
    }

    /// TOML text that parses back to this configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_layer()).expect("config serializes")
    }
}
