use std::io::{Read, Write};

use super::{Activation, LoraAdapter, LoraLayer, LoraModel};
use crate::error::{Error, Result};
use crate::numerics::{read_u64, Matrix};

/// Writes a model checkpoint.
///
/// Layout: four little-endian `u64` (`L`, `n`, `r`, `seed`), then for each
/// layer the base, `A`, `B` and bias matrices in the matrix wire format.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &LoraModel, seed: u64) -> Result<()> {
    for v in [
        model.num_layers() as u64,
        model.width() as u64,
        model.rank() as u64,
        seed,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for layer in model.layers() {
        layer.base().write_to(w)?;
        layer.adapter().a().write_to(w)?;
        layer.adapter().b().write_to(w)?;
        layer.bias().write_to(w)?;
    }
    Ok(())
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub seed: u64,
    pub layers: Vec<LoraLayer>,
}

impl Checkpoint {
    /// Rebuilds a model. Head size, adapter scale and activation are not
    /// part of the file and come from the run configuration.
    pub fn into_model(
        self,
        num_classes: usize,
        scale: f64,
        activation: Activation,
    ) -> Result<LoraModel> {
        LoraModel::from_layers(self.layers, num_classes, scale, activation)
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let layers = read_u64(r)? as usize;
    let n = read_u64(r)? as usize;
    let rank = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    if layers == 0 || layers > 1 << 16 {
        return Err(Error::Format(format!("implausible layer count {layers}")));
    }
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let base = Matrix::read_from(r)?;
        let a = Matrix::read_from(r)?;
        let b = Matrix::read_from(r)?;
        let bias = Matrix::read_from(r)?;
        if base.shape() != (n, n) || a.shape() != (n, rank) {
            return Err(Error::Format(format!(
                "layer {l} shapes disagree with header (n={n}, r={rank})"
            )));
        }
        let adapter = LoraAdapter::new(a, b).map_err(|e| Error::Format(e.to_string()))?;
        out.push(LoraLayer::new(base, adapter, bias).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(Checkpoint { seed, layers: out })
}
