//! Plaintext federated-averaging reference over the same block-Hankel
//! projection: the oracle the secure pipeline must match when noise is off.
//!
//! The reference shares the simulator's data, dropout and training schedule
//! but aggregates in the clear, in the matrix domain, with no fixed-point
//! codec and no encryption:
//!
//! `ΔW ← Σ_{j∈P} n_j · decompress(compress(clip(ΔW_j))) / Σ_{j∈P} n_j`
//!
//! Any divergence from the secure run beyond accumulated fixed-point
//! tolerance indicates a protocol bug.

use super::*;

/// Trajectory produced by the plaintext reference run.
#[derive(Debug, Clone)]
pub struct ReferenceReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Per-round MSE over all shards, one entry per scheduled round.
    pub losses: Vec<f64>,
    /// Global weights after each round (skipped rounds repeat the previous).
    pub weight_trajectory: Vec<Vec<f64>>,
    pub final_weights: Vec<f64>,
    pub completed_rounds: usize,
}

/// Run plain FedAvg-over-BHM with the exact schedule (data, dropout,
/// training) of [`run_simulation`] at the same config.
pub fn run_reference(config: &SimConfig) -> Result<ReferenceReport, SimError> {
    config.validate()?;
    let shards = generate_data(config)?;
    let shape = ModelShape::for_dim(config.model_dim);

    let mut weights = vec![0.0; config.model_dim];
    let initial_loss = global_loss(&weights, &shards);
    let mut losses = Vec::with_capacity(config.rounds as usize);
    let mut trajectory = Vec::with_capacity(config.rounds as usize);
    let mut completed = 0usize;

    for round in 0..config.rounds {
        let dropout = dropout_set(config, round);
        let mut weighted_sum = ndarray::Array2::<f64>::zeros((shape.rows, shape.cols));
        let mut weight_total = 0u64;
        let mut survivors = 0usize;
        for (i, shard) in shards.iter().enumerate() {
            if dropout.contains(&(i as u32)) {
                continue;
            }
            survivors += 1;
            let model = ToyModel::new(weights.clone());
            let delta = local_train(&model, shard, config.learning_rate, config.local_steps)?;
            let clipped = dp::clip(&delta, config.dp.clip_bound);
            let matrix = shape.to_matrix(&clipped)?;
            let projected = bhm::decompress(&bhm::compress(&matrix.view(), &config.bhm)?)?;
            let n_j = shard.len() as f64;
            weighted_sum = weighted_sum + projected * n_j;
            weight_total += shard.len() as u64;
        }
        if survivors >= config.threshold {
            let mean = weighted_sum / weight_total as f64;
            let delta_vec = shape.to_vector(&mean);
            for (w, d) in weights.iter_mut().zip(&delta_vec) {
                *w += d;
            }
            completed += 1;
        }
        losses.push(global_loss(&weights, &shards));
        trajectory.push(weights.clone());
    }

    Ok(ReferenceReport {
        initial_loss,
        final_loss: global_loss(&weights, &shards),
        losses,
        weight_trajectory: trajectory,
        final_weights: weights,
        completed_rounds: completed,
    })
}
