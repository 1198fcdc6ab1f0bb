//! Small convolutional networks with hand-written backpropagation.

mod adam;
pub mod checkpoint;
mod layers;
pub mod losses;
mod model;
mod network;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use layers::LayerSpec;
pub use model::{latents_to_matrix, matrix_to_latents, ArchConfig, ModelBundle, Role};
pub use network::{Cache, Network};
pub use tensor::{Shape3, Tensor4};
