//! Minimal trainable-network core: dense layers, reverse-mode gradients,
//! Adam, losses, and checkpoint serialization. Everything downstream
//! (denoiser, classifiers) is built from these parts. 32-bit floats
//! throughout; all training loops are single-threaded and seed-deterministic.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod net;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Container};
pub use loss::{cosine_loss, cross_entropy, mse, softmax};
pub use net::{Activation, Gradients, LayerSpec, NetSpec, Trace};
pub use params::{ParamStore, Tensor};
