//! Planted-partition fixture shared by the examples and the end-to-end tests.

use crate::error::Result;
use crate::graph::{generate_sbm, random_splits, Graph};
use crate::trainer::{OptimizerKind, TrainConfig};

pub const BLOCKS: usize = 2;
pub const PER_BLOCK: usize = 30;
pub const P_IN: f64 = 0.2;
pub const P_OUT: f64 = 0.02;
pub const FEATURE_DIM: usize = 64;
pub const NOISE: f64 = 1.0;

/// 2 × 30 SBM with one-hot block features under unit Gaussian noise and a
/// stored 50/50 train/test split.
pub fn sbm_graph(seed: u64) -> Result<Graph> {
    let g = generate_sbm(BLOCKS, PER_BLOCK, P_IN, P_OUT, FEATURE_DIM, NOISE, seed)?;
    let splits = random_splits(g.num_nodes(), 0.5, 0.0, seed ^ 1);
    g.with_splits(splits)
}

/// Training setup sized for the fixture: small batches and short walks keep
/// same-block negatives from flattening the loss curve.
pub fn sbm_config(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        hidden_size: 64,
        batch_size: 16,
        learning_rate: 1e-2,
        optimizer: OptimizerKind::AdamW,
        epochs,
        ..Default::default()
    };
    cfg.sampler.walk_length = 4;
    cfg.loss.temperature = 0.2;
    cfg
}
