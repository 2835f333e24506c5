//! Siamese graph embedding model and its margin-loss training.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{
    aggregate, embed, embed_prepared, encode, euclidean_distance, init_params, pair_loss,
    pair_loss_and_grad, propagate, Embedding, ModelConfig, ModelParams, PreparedGraph,
};
pub use train::{grad_step, score_pairs, train_model, EpochRecord, GraphPair, PairSource, TrainOutcome, TrainState};
