//! Per-batch test-time adaptation of the encoder from reconstruction
//! gradients: batch formation (random or geographically coherent),
//! iteration-count selection on validation, and the full adaptation run
//! that yields predictions plus a per-batch trace. The encoder starts
//! every batch from its trained state; the task and modality decoders
//! stay frozen throughout.

pub mod adapt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::stats::NormalizedTile;
use crate::error::{LabError, Result};
use crate::model::Model;
use crate::splits::partition::{geographic_partition, random_partition, BBox};
use crate::util::{derive_seed, hash_f64s};

pub use adapt::{
    adapt_encoder, batch_reconstruction_losses, normalized_mean_gradient,
    per_modality_encoder_gradients, ttt_update, AdaptStep, BatchReconLosses,
};

/// How test batches are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Batching {
    /// Seeded shuffle cut into consecutive chunks.
    Random,
    /// Recursive spatial subdivision; each batch is a contiguous region.
    Geographic,
}

impl Batching {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Batching::Random),
            "geographic" => Ok(Batching::Geographic),
            other => Err(LabError::Usage(format!(
                "unknown batching mode {other:?}; expected random or geographic"
            ))),
        }
    }
}

/// Test-time adaptation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TttConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub batching: Batching,
    pub seed: u64,
}

impl Default for TttConfig {
    fn default() -> Self {
        TttConfig {
            batch_size: 8,
            learning_rate: 1e-2,
            max_iterations: 5,
            batching: Batching::Random,
            seed: 0,
        }
    }
}

impl TttConfig {
    /// Boundary validation; library entry points deliberately accept
    /// degenerate values (zero learning rate, zero iterations) because
    /// those are meaningful controls in experiments.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LabError::Usage("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LabError::Usage(
                "adaptation learning rate must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(LabError::Usage("max iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// One formed batch: member tiles, plus the bounding box when the batch
/// is a geographic region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileBatch {
    pub tile_ids: Vec<u64>,
    pub bbox: Option<BBox>,
}

/// Form adaptation batches over the given tiles per the configured mode.
/// Geographic mode subdivides space; random mode shuffles with a seed
/// derived from the config seed.
pub fn make_batches(
    tiles: &BTreeMap<u64, NormalizedTile>,
    config: &TttConfig,
) -> Result<Vec<TileBatch>> {
    let points: Vec<(u64, (f64, f64))> =
        tiles.iter().map(|(&id, nt)| (id, (nt.lon, nt.lat))).collect();
    match config.batching {
        Batching::Geographic => Ok(geographic_partition(&points, config.batch_size)?
            .into_iter()
            .map(|b| TileBatch {
                tile_ids: b.tile_ids,
                bbox: Some(b.bbox),
            })
            .collect()),
        Batching::Random => {
            let ids: Vec<u64> = points.iter().map(|p| p.0).collect();
            let seed = derive_seed(config.seed, "ttt-batches");
            Ok(random_partition(&ids, config.batch_size, seed)?
                .into_iter()
                .map(|tile_ids| TileBatch {
                    tile_ids,
                    bbox: None,
                })
                .collect())
        }
    }
}

/// Outcome of iteration-count selection on a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSelection {
    /// Rounded mean of the per-batch best iteration indices.
    pub chosen: usize,
    /// Best iteration index per validation batch, in batch order.
    pub per_batch_best: Vec<usize>,
}

/// Round-half-to-even mean of per-batch best iteration indices.
pub fn mean_best_iteration(best: &[usize]) -> Result<usize> {
    if best.is_empty() {
        return Err(LabError::Config(
            "iteration selection needs at least one batch".into(),
        ));
    }
    let mean = best.iter().map(|&b| b as f64).sum::<f64>() / best.len() as f64;
    Ok(mean.round_ties_even() as usize)
}

/// Mean task loss over a batch of labeled tiles.
pub fn batch_task_loss(model: &Model, batch: &[&NormalizedTile]) -> Result<f64> {
    let mut sum = 0.0;
    for nt in batch {
        let pred = model.predict(nt)?;
        sum += model.task_loss(&pred, nt)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Pick the adaptation iteration count on labeled validation tiles: for
/// each validation batch, take up to `max_iterations` adaptation steps
/// from the trained encoder and record the iteration index (0 = no
/// adaptation) with the lowest batch task loss, earliest index winning
/// ties; the final count is the rounded mean over batches. Batches are
/// formed in the same mode the test run will use. If adaptation turns
/// non-finite mid-batch, later iterations simply stop being candidates.
pub fn select_iterations(
    model: &Model,
    tiles: &BTreeMap<u64, NormalizedTile>,
    config: &TttConfig,
) -> Result<IterationSelection> {
    let batches = make_batches(tiles, config)?;
    let mut per_batch_best = Vec::with_capacity(batches.len());
    for batch in &batches {
        let refs = batch_refs(tiles, batch)?;
        let mut working = model.clone();
        let mut best_idx = 0usize;
        let mut best_loss = batch_task_loss(&working, &refs)?;
        for i in 1..=config.max_iterations {
            match adapt_encoder(&mut working, &refs, config.learning_rate, 1) {
                Ok(_) => {}
                Err(LabError::NonFinite { .. }) => break,
                Err(e) => return Err(e),
            }
            let loss = batch_task_loss(&working, &refs)?;
            if loss.is_finite() && loss < best_loss {
                best_loss = loss;
                best_idx = i;
            }
        }
        per_batch_best.push(best_idx);
    }
    let chosen = mean_best_iteration(&per_batch_best)?;
    Ok(IterationSelection {
        chosen,
        per_batch_best,
    })
}

/// Per-batch record of one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrace {
    pub batch_index: usize,
    pub tile_ids: Vec<u64>,
    /// Present when the batch is a geographic region.
    pub bbox: Option<BBox>,
    /// Per adaptation step taken, the per-modality batch reconstruction
    /// losses measured at the start of that step.
    pub iteration_losses: Vec<BTreeMap<String, f64>>,
    /// Adaptation steps actually used for this batch's predictions
    /// (0 when adaptation was skipped or aborted).
    pub chosen_iteration: usize,
    /// True when adaptation went non-finite and predictions fell back to
    /// the unadapted encoder.
    pub fallback: bool,
    /// Checksum of the encoder the next batch starts from; equals the
    /// trained encoder's checksum by construction.
    pub restored_checksum: u64,
    /// Order-independent digest of this batch's predictions, tiles in
    /// ascending id order.
    pub prediction_digest: u64,
}

/// Everything a test-time adaptation run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TttRun {
    /// Per-tile task predictions, every test tile present.
    pub predictions: BTreeMap<u64, Vec<f64>>,
    pub traces: Vec<BatchTrace>,
}

fn batch_refs<'a>(
    tiles: &'a BTreeMap<u64, NormalizedTile>,
    batch: &TileBatch,
) -> Result<Vec<&'a NormalizedTile>> {
    batch
        .tile_ids
        .iter()
        .map(|id| {
            tiles
                .get(id)
                .ok_or_else(|| LabError::Dataset(format!("batch references unknown tile {id}")))
        })
        .collect()
}

/// Adapt a copy of the model on one batch and predict its tiles with the
/// adapted encoder. Returns the per-step reconstruction losses and the
/// per-tile predictions. Any non-finite loss or prediction is reported
/// as a numerical error so the caller can fall back.
fn adapt_batch(
    model: &Model,
    refs: &[&NormalizedTile],
    learning_rate: f64,
    iterations: usize,
) -> Result<(Vec<BTreeMap<String, f64>>, BTreeMap<u64, Vec<f64>>)> {
    let mut working = model.clone();
    let steps = adapt_encoder(&mut working, refs, learning_rate, iterations)?;
    let mut iteration_losses = Vec::with_capacity(steps.len());
    for step in &steps {
        if step.losses.per_modality.values().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite {
                op: "ttt_adaptation_loss",
            });
        }
        iteration_losses.push(step.losses.per_modality.clone());
    }
    let mut predictions = BTreeMap::new();
    for nt in refs {
        let pred = working.predict(nt)?;
        if pred.data().iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite {
                op: "ttt_prediction",
            });
        }
        predictions.insert(nt.id, pred.data().to_vec());
    }
    Ok((iteration_losses, predictions))
}

fn digest_predictions(predictions: &BTreeMap<u64, Vec<f64>>) -> u64 {
    let flat: Vec<f64> = predictions.values().flatten().copied().collect();
    hash_f64s(&flat)
}

/// Run test-time adaptation over explicit batches. Each batch starts
/// from the trained encoder (the working copy is discarded afterwards,
/// which is the reset), adapts for `iterations` steps, and predicts its
/// own tiles; batches are therefore independent and the trained model is
/// never mutated. A batch whose adaptation turns non-finite falls back
/// to unadapted predictions, flagged in its trace.
pub fn run_ttt_over_batches(
    model: &Model,
    tiles: &BTreeMap<u64, NormalizedTile>,
    batches: &[TileBatch],
    learning_rate: f64,
    iterations: usize,
) -> Result<TttRun> {
    let baseline = model.encoder.checksum();
    let mut predictions = BTreeMap::new();
    let mut traces = Vec::with_capacity(batches.len());
    for (batch_index, batch) in batches.iter().enumerate() {
        let refs = batch_refs(tiles, batch)?;
        let attempt = adapt_batch(model, &refs, learning_rate, iterations);
        let (iteration_losses, batch_preds, chosen, fallback) = match attempt {
            Ok((losses, preds)) => (losses, preds, iterations, false),
            Err(LabError::NonFinite { .. }) => {
                let mut preds = BTreeMap::new();
                for nt in &refs {
                    preds.insert(nt.id, model.predict(nt)?.data().to_vec());
                }
                (Vec::new(), preds, 0, true)
            }
            Err(e) => return Err(e),
        };
        debug_assert_eq!(model.encoder.checksum(), baseline);
        traces.push(BatchTrace {
            batch_index,
            tile_ids: batch.tile_ids.clone(),
            bbox: batch.bbox.clone(),
            iteration_losses,
            chosen_iteration: chosen,
            fallback,
            restored_checksum: model.encoder.checksum(),
            prediction_digest: digest_predictions(&batch_preds),
        });
        predictions.extend(batch_preds);
    }
    Ok(TttRun {
        predictions,
        traces,
    })
}

/// Full test-time adaptation: form batches per config, adapt each from
/// the trained encoder for `iterations` steps, and return per-tile
/// predictions plus the per-batch trace.
pub fn run_ttt(
    model: &Model,
    tiles: &BTreeMap<u64, NormalizedTile>,
    config: &TttConfig,
    iterations: usize,
) -> Result<TttRun> {
    let batches = make_batches(tiles, config)?;
    run_ttt_over_batches(model, tiles, &batches, config.learning_rate, iterations)
}
