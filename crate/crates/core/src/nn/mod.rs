//! Transformer building blocks with hand-written backward passes (f64).

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use attention::{attention, MultiHeadAttention};
pub use checkpoint::Checkpoint;
pub use layers::{LayerNorm, Linear};
pub use model::{compute_gradients, Example, ModelConfig, PreparedInput, TransformerModel};
pub use train::{learning_rate, train, train_with_progress, EpochRecord, TrainConfig, TrainedModel};
