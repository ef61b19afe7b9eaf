pub mod adam;
pub mod batching;
pub mod checkpoint;
pub mod objective;
pub mod pretrain;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use batching::{augmented_cells, make_batches, pack_batches, DEFAULT_MAX_CELLS};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use objective::{accumulate_table_gradients, cell_probabilities, corruption_probability, pretrain_loss, sigmoid};
pub use pretrain::{batch_gradients, pretrain, PretrainConfig, PretrainReport, Trainer};
