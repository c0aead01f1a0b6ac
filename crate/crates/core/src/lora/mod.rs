//! Low-rank adapters over frozen square weights, the toy classifier built
//! from them, and adapter parameter counting.

mod adapter;
mod checkpoint;
mod head;
mod model;

pub use adapter::{lora_param_count, LoraAdapter};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use head::Activation;
pub use model::{
    lora_forward, lora_gradients, AdapterGrad, AdapterSet, DenseModel, LoraLayer, LoraModel,
    ModelConfig,
};
