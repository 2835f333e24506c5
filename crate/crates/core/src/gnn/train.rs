//! Mini-batch training with adaptive moment estimation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{
    embed_prepared, euclidean_distance, init_params, pair_loss_and_grad, Embedding, ModelConfig,
    ModelParams, PreparedGraph,
};
use crate::error::{Error, Result};
use crate::eval::auc;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// A labeled pair of graphs, by position in a graph table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPair {
    pub query: usize,
    pub target: usize,
    pub label: i8,
}

/// Supplies the training pairs of each epoch.
pub trait PairSource {
    /// `per_label` positives and as many negatives for `epoch`.
    fn epoch_pairs(&self, epoch: usize, per_label: usize) -> Result<Vec<GraphPair>>;
}

impl<F> PairSource for F
where
    F: Fn(usize, usize) -> Result<Vec<GraphPair>>,
{
    fn epoch_pairs(&self, epoch: usize, per_label: usize) -> Result<Vec<GraphPair>> {
        self(epoch, per_label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_auc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        TrainState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            params,
            step: 0,
            history: Vec::new(),
        }
    }
}

/// Mean-loss gradient over `batch`, followed by one Adam update.
///
/// Per-pair gradients are computed independently and summed in batch order,
/// so the result does not depend on the number of worker threads.
pub fn grad_step(
    batch: &[GraphPair],
    graphs: &[PreparedGraph],
    state: &mut TrainState,
    config: &ModelConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty training batch".into()));
    }
    let params = &state.params;
    let per_pair: Vec<Result<(f64, ModelParams)>> = batch
        .par_iter()
        .map(|p| {
            let mut g = params.zeros_like();
            let loss = pair_loss_and_grad(&graphs[p.query], &graphs[p.target], p.label, params, config, &mut g)?;
            Ok((loss, g))
        })
        .collect();
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for r in per_pair {
        let (loss, g) = r?;
        total += loss;
        grad.add_scaled(1.0, &g);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(inv);
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }

    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    state.first_moment.zip_apply(&grad, |m, g| *m = BETA1 * *m + (1.0 - BETA1) * g);
    state.second_moment.zip_apply(&grad, |v, g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
    let lr = config.learning_rate;
    let mut step = state.first_moment.clone();
    step.zip_apply(&state.second_moment, |m, v| *m = -lr * (*m / c1) / ((v / c2).sqrt() + EPSILON));
    state.params.add_scaled(1.0, &step);
    Ok(total * inv)
}

/// Similarity `1 / (1 + d)` of every pair under `params`, embedding each
/// distinct graph once.
pub fn score_pairs(
    pairs: &[GraphPair],
    graphs: &[PreparedGraph],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<(f64, i8)>> {
    let mut needed: Vec<usize> = pairs.iter().flat_map(|p| [p.query, p.target]).collect();
    needed.sort_unstable();
    needed.dedup();
    let embedded: Vec<Result<(usize, Embedding)>> = needed
        .par_iter()
        .map(|&i| Ok((i, embed_prepared(&graphs[i], params, config)?)))
        .collect();
    let table: BTreeMap<usize, Embedding> = embedded.into_iter().collect::<Result<_>>()?;
    Ok(pairs
        .iter()
        .map(|p| {
            let d = euclidean_distance(&table[&p.query], &table[&p.target]);
            (1.0 / (1.0 + d), p.label)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// Trains for `epochs` epochs of `epoch_size` positives plus `epoch_size`
/// negatives and keeps the parameters with the best validation AUC (the
/// earliest epoch wins ties).
pub fn train_model(
    graphs: &[PreparedGraph],
    source: &dyn PairSource,
    validation: &[GraphPair],
    config: &ModelConfig,
    epochs: usize,
    epoch_size: usize,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(init_params(config)?);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 0..epochs {
        let pairs = source.epoch_pairs(epoch, epoch_size)?;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in pairs.chunks(config.batch_size) {
            loss_sum += grad_step(batch, graphs, &mut state, config)?;
            batches += 1;
        }
        let train_loss = if batches == 0 { 0.0 } else { loss_sum / batches as f64 };
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let validation_auc = auc(&score_pairs(validation, graphs, &state.params, config)?)?;
        log::info!("epoch {epoch}: loss {train_loss:.5} validation auc {validation_auc:.4}");
        state.history.push(EpochRecord {
            epoch,
            train_loss,
            validation_auc,
        });
        if best.as_ref().is_none_or(|(_, a, _)| validation_auc > *a) {
            best = Some((epoch, validation_auc, state.params.clone()));
        }
    }
    Ok(match best {
        Some((epoch, _, params)) => TrainOutcome {
            params,
            history: state.history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            params: state.params,
            history: state.history,
            best_epoch: None,
        },
    })
}
