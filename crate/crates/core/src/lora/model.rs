use serde::{Deserialize, Serialize};

use super::head::{accuracy, softmax_cross_entropy, Activation};
use super::LoraAdapter;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, linear_backward, linear_forward, Matrix, Purpose, Rng};

/// Architecture of the toy network: `layers` square layers of size
/// `width`, each carrying a rank-`rank` adapter, followed by a softmax head
/// over the first `num_classes` outputs of the last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub rank: usize,
    pub num_classes: usize,
    /// Multiplier on `A·B`. 1.0 means the plain sum `W + A·B`.
    pub adapter_scale: f64,
    pub activation: Activation,
    /// Standard deviation of the frozen base weights is `base_gain / √width`.
    pub base_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            width: 512,
            rank: 512,
            num_classes: 3,
            adapter_scale: 1.0,
            activation: Activation::Tanh,
            base_gain: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::param("layers", "must be >= 1"));
        }
        if self.width == 0 {
            return Err(Error::param("width", "must be >= 1"));
        }
        if self.rank == 0 || self.rank > self.width {
            return Err(Error::param(
                "rank",
                format!("need 1 <= rank <= width ({}), got {}", self.width, self.rank),
            ));
        }
        if self.num_classes == 0 || self.num_classes > self.width {
            return Err(Error::param(
                "num_classes",
                format!("need 1 <= num_classes <= width ({}), got {}", self.width, self.num_classes),
            ));
        }
        if !self.adapter_scale.is_finite() {
            return Err(Error::param("adapter_scale", "must be finite"));
        }
        if !(self.base_gain >= 0.0 && self.base_gain.is_finite()) {
            return Err(Error::param("base_gain", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One adapted layer: frozen `base` (n×n), trainable `adapter`, frozen
/// `bias` (n×1).
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    base: Matrix,
    adapter: LoraAdapter,
    bias: Matrix,
}

impl LoraLayer {
    pub fn new(base: Matrix, adapter: LoraAdapter, bias: Matrix) -> Result<Self> {
        let n = adapter.width();
        if base.shape() != (n, n) || bias.shape() != (n, 1) {
            return Err(Error::shape(
                "LoraLayer::new",
                format!(
                    "adapter width {n} with base {:?} and bias {:?}",
                    base.shape(),
                    bias.shape()
                ),
            ));
        }
        Ok(Self { base, adapter, bias })
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn adapter(&self) -> &LoraAdapter {
        &self.adapter
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn width(&self) -> usize {
        self.adapter.width()
    }

    /// `W + s·A·B`.
    pub fn effective_weight(&self, scale: f64) -> Matrix {
        let mut w = self.base.clone();
        w.axpy(scale, &self.adapter.delta()).expect("validated shapes");
        w
    }
}

/// Pre-activation output of an adapted layer, `(W + s·A·B)·x + bias`.
///
/// Computed as `W·x + s·A·(B·x) + bias` so the `n×n` update is never
/// formed. With `B = 0` the result is bitwise the base layer's output.
pub fn lora_forward(x: &Matrix, layer: &LoraLayer, scale: f64) -> Result<Matrix> {
    let mut z = layer.base.matmul(x)?;
    let bx = layer.adapter.b().matmul(x)?;
    let abx = layer.adapter.a().matmul(&bx)?;
    z.axpy(scale, &abx)?;
    z.add_bias(&layer.bias)
}

/// Gradient of the loss with respect to one adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub g_a: Matrix,
    pub g_b: Matrix,
}

/// The trainable state of a model: one adapter per layer.
pub type AdapterSet = Vec<LoraAdapter>;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraModel {
    layers: Vec<LoraLayer>,
    num_classes: usize,
    scale: f64,
    activation: Activation,
}

impl LoraModel {
    /// Random frozen bases `N(0, gain²/n)`, zero biases, fresh adapters.
    /// Draws from the `Init` substream of `rng`.
    pub fn init(cfg: &ModelConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.width;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut s = rng.substream(Purpose::Init, l as u64, 0);
            let base = gaussian_sample(&mut s, n, n, 0.0, cfg.base_gain / (n as f64).sqrt())?;
            let adapter = LoraAdapter::init(n, cfg.rank, &mut s)?;
            layers.push(LoraLayer::new(base, adapter, Matrix::zeros(n, 1))?);
        }
        Self::from_layers(layers, cfg.num_classes, cfg.adapter_scale, cfg.activation)
    }

    pub fn from_layers(
        layers: Vec<LoraLayer>,
        num_classes: usize,
        scale: f64,
        activation: Activation,
    ) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::param("layers", "model needs at least one layer"));
        };
        let (n, r) = (first.width(), first.adapter.rank());
        if layers
            .iter()
            .any(|l| l.width() != n || l.adapter.rank() != r)
        {
            return Err(Error::shape("LoraModel", "all layers must share width and rank"));
        }
        if num_classes == 0 || num_classes > n {
            return Err(Error::param("num_classes", format!("must be in 1..={n}")));
        }
        Ok(Self {
            layers,
            num_classes,
            scale,
            activation,
        })
    }

    pub fn layers(&self) -> &[LoraLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }

    pub fn rank(&self) -> usize {
        self.layers[0].adapter.rank()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn adapters(&self) -> AdapterSet {
        self.layers.iter().map(|l| l.adapter.clone()).collect()
    }

    /// Total trainable scalars, `L · 2 · n · r`.
    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.adapter.param_count()).sum()
    }

    /// Replaces every adapter. Bases and biases are untouched.
    pub fn set_adapters(&mut self, adapters: &[LoraAdapter]) -> Result<()> {
        if adapters.len() != self.layers.len() {
            return Err(Error::Protocol(format!(
                "{} adapters for a {}-layer model",
                adapters.len(),
                self.layers.len()
            )));
        }
        for (layer, ad) in self.layers.iter().zip(adapters) {
            if !layer.adapter.same_shape(ad) {
                return Err(Error::Protocol(format!(
                    "adapter shapes {:?}/{:?} do not match {:?}/{:?}",
                    ad.a().shape(),
                    ad.b().shape(),
                    layer.adapter.a().shape(),
                    layer.adapter.b().shape()
                )));
            }
        }
        for (layer, ad) in self.layers.iter_mut().zip(adapters) {
            layer.adapter = ad.clone();
        }
        Ok(())
    }

    /// True when every base matrix and bias matches `other` bit for bit.
    pub fn frozen_bit_eq(&self, other: &LoraModel) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.base.bit_eq(&b.base) && a.bias.bit_eq(&b.bias))
    }

    /// Logits for each column of `x` (the full last-layer pre-activation;
    /// only the first `num_classes` rows are read by the head).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    // Returns the last pre-activation and the input of every layer.
    fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = lora_forward(&h, layer, self.scale)?;
            inputs.push(h);
            if l == last {
                return Ok((z, inputs));
            }
            h = self.activation.apply(&z);
        }
        unreachable!("model has at least one layer")
    }

    /// Mean cross-entropy over the batch and its gradients with respect to
    /// every `A` and `B`, ordered by layer.
    pub fn gradients(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<AdapterGrad>)> {
        check_batch(x, labels, self.width(), self.num_classes)?;
        let (z, inputs) = self.forward_cached(x)?;
        let (loss, mut dz) = softmax_cross_entropy(&z, labels, self.num_classes);
        let s = self.scale;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = &inputs[l];
            let (a, b) = (layer.adapter.a(), layer.adapter.b());
            // dL/dW_eff = dz·hᵀ, so dL/dA = s·dz·(B·h)ᵀ and dL/dB = s·(Aᵀ·dz)·hᵀ.
            let bh = b.matmul(h)?;
            let at_dz = a.transpose().matmul(&dz)?;
            let g_a = dz.matmul(&bh.transpose())?.scale(s);
            let g_b = at_dz.matmul(&h.transpose())?.scale(s);
            grads.push(AdapterGrad { g_a, g_b });
            if l > 0 {
                let mut dh = layer.base.transpose().matmul(&dz)?;
                dh.axpy(s, &b.transpose().matmul(&at_dz)?)?;
                dz = dh.hadamard(&self.activation.derivative_from_output(h))?;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// `A -= lr·g_A`, `B -= lr·g_B` for every layer.
    pub fn apply_gradients(&mut self, grads: &[AdapterGrad], lr: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::shape("apply_gradients", "one gradient pair per layer"));
        }
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            let (a, b) = layer.adapter.parts_mut();
            a.axpy(-lr, &g.g_a)?;
            b.axpy(-lr, &g.g_b)?;
        }
        Ok(())
    }

    /// Equivalent dense network with `W' = W + s·A·B` in every layer.
    pub fn densify(&self) -> DenseModel {
        DenseModel {
            weights: self.layers.iter().map(|l| l.effective_weight(self.scale)).collect(),
            biases: self.layers.iter().map(|l| l.bias.clone()).collect(),
            num_classes: self.num_classes,
            activation: self.activation,
        }
    }

    /// Mean loss and accuracy over a labelled set, via the dense form.
    pub fn evaluate(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
        self.densify().evaluate(x, labels)
    }
}

/// Mean-over-batch adapter gradients of the cross-entropy loss.
pub fn lora_gradients(model: &LoraModel, x: &Matrix, labels: &[usize]) -> Result<Vec<AdapterGrad>> {
    Ok(model.gradients(x, labels)?.1)
}

fn check_batch(x: &Matrix, labels: &[usize], width: usize, classes: usize) -> Result<()> {
    if labels.is_empty() || x.cols() == 0 {
        return Err(Error::param("batch", "must contain at least one sample"));
    }
    if x.cols() != labels.len() || x.rows() != width {
        return Err(Error::shape(
            "batch",
            format!(
                "inputs {}x{} with {} labels for width {width}",
                x.rows(),
                x.cols(),
                labels.len()
            ),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::param("labels", format!("label {bad} >= num_classes {classes}")));
    }
    Ok(())
}

/// Plain network with every square weight trainable. Used by the
/// full-parameter federated averaging baseline and as a reference for the
/// adapted forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
    num_classes: usize,
    activation: Activation,
}

impl DenseModel {
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    pub fn width(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum()
    }

    pub fn set_weights(&mut self, weights: &[Matrix]) -> Result<()> {
        if weights.len() != self.weights.len()
            || weights.iter().zip(&self.weights).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Protocol("dense weight shapes do not match".into()));
        }
        self.weights = weights.to_vec();
        Ok(())
    }

    fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = linear_forward(&h, w, b)?;
            inputs.push(h);
            if l == last {
                return Ok((z, inputs));
            }
            h = self.activation.apply(&z);
        }
        unreachable!("model has at least one layer")
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Mean cross-entropy and its gradient with respect to every weight.
    pub fn gradients(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Matrix>)> {
        check_batch(x, labels, self.width(), self.num_classes)?;
        let (z, inputs) = self.forward_cached(x)?;
        let (loss, mut dz) = softmax_cross_entropy(&z, labels, self.num_classes);
        let mut grads = Vec::with_capacity(self.weights.len());
        for l in (0..self.weights.len()).rev() {
            let g = linear_backward(&dz, &inputs[l], &self.weights[l])?;
            grads.push(g.grad_w);
            if l > 0 {
                dz = g
                    .grad_x
                    .hadamard(&self.activation.derivative_from_output(&inputs[l]))?;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    pub fn apply_gradients(&mut self, grads: &[Matrix], lr: f64) -> Result<()> {
        if grads.len() != self.weights.len() {
            return Err(Error::shape("apply_gradients", "one gradient per layer"));
        }
        for (w, g) in self.weights.iter_mut().zip(grads) {
            w.axpy(-lr, g)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
        check_batch(x, labels, self.width(), self.num_classes)?;
        let z = self.forward(x)?;
        let (loss, _) = softmax_cross_entropy(&z, labels, self.num_classes);
        Ok((loss, accuracy(&z, labels, self.num_classes)))
    }
}
