//! Dueling deep Q-network, prioritized replay and checkpoints.

pub mod checkpoint;
pub mod network;
pub mod replay;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointMeta};
pub use network::{sgd_update, td_target, Adam, Dims, NetError, QNetwork, Sample};
pub use replay::{ReplayBuffer, ReplayConfig, SampledBatch, Transition};
