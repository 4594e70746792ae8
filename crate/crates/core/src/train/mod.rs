//! Joint training of the encoder with the main-task decoder and the
//! multimodal reconstruction decoder.
//!
//! Each optimizer step combines two scalar objectives over a batch: the
//! mean task loss, and the unweighted mean over modalities (present in the
//! batch) of per-modality batch reconstruction losses. The task decoder is
//! driven by the first term, the modality decoder by the second, and the
//! encoder by their sum — or frozen entirely in linear-probe mode.

pub mod adamw;
pub mod schedule;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::stats::{modality_contributes, normalize_tile, NormalizedTile};
use crate::data::tile::Dataset;
use crate::error::{LabError, Result};
use crate::eval::task_metric_from_predictions;
use crate::model::forward::{build_tile_graph, extract_grad};
use crate::model::{bind_store, Checkpoint, Model};
use crate::splits::protocol::{SplitSet, Subset};
use crate::tensor::{GradVector, Tape};

pub use adamw::AdamW;
pub use schedule::Schedule;

/// Whether joint training updates the encoder or keeps it frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "finetune")]
    Finetune,
    #[serde(rename = "linear-probe")]
    LinearProbe,
}

impl Mode {
    pub fn parse(text: &str) -> Result<Mode> {
        match text {
            "finetune" => Ok(Mode::Finetune),
            "linear-probe" => Ok(Mode::LinearProbe),
            other => Err(LabError::Usage(format!(
                "unknown training mode {other:?}, expected finetune or linear-probe"
            ))),
        }
    }
}

/// Joint-training hyperparameters. Defaults are the reference recipe;
/// desk-scale experiments override epochs and batch size in their configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            max_lr: 1e-4,
            min_lr: 1e-6,
            weight_decay: 0.05,
            warmup_epochs: 10,
            seed: 0,
            mode: Mode::Finetune,
        }
    }
}

impl TrainConfig {
    /// Boundary validation for configs arriving from files or the command
    /// line. [`joint_train`] itself does not re-validate, so in-process
    /// callers may run degenerate configs (for example a zero learning
    /// rate) deliberately.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LabError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(LabError::Config(format!(
                "warmup_epochs {} must be smaller than epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(LabError::Config(format!(
                "learning rates must satisfy 0 < min_lr <= max_lr, got {} and {}",
                self.min_lr, self.max_lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(LabError::Config(format!(
                "weight_decay must be a finite non-negative number, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Learning rate at the epoch's final step.
    pub lr: f64,
    /// Mean per-tile task loss over the epoch.
    pub task_loss: f64,
    /// Mean per-batch reconstruction objective over the epoch.
    pub recon_loss: f64,
    /// Task metric on the validation split after the epoch's updates.
    pub validation_metric: f64,
}

/// Best-validation checkpoint plus the full epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Gradients and loss terms of one joint-training step over a batch.
pub struct BatchGradients {
    /// Encoder gradient of task + reconstruction objectives; None in
    /// linear-probe mode (the encoder is frozen).
    pub encoder: Option<GradVector>,
    /// Task-decoder gradient of the mean task loss.
    pub task_decoder: GradVector,
    /// Modality-decoder gradient of the reconstruction objective.
    pub modality_decoder: GradVector,
    /// Mean per-tile task loss of the batch.
    pub mean_task_loss: f64,
    /// Mean over batch-present modalities of per-modality batch losses.
    pub recon_objective: f64,
}

/// Compute one batch's gradients for all three parameter groups.
///
/// The combined objective is `(1/|B|) Σ_t task_t + (1/|M|) Σ_m R_m`, where
/// `R_m` is the mean reconstruction loss of modality `m` over the tiles
/// where it gives supervision and `M` is the set of modalities present
/// anywhere in the batch. Both terms are assembled per tile with the
/// appropriate weights so a single graph per tile serves both backward
/// passes; the encoder accumulates from each, the decoders from theirs
/// alone. A modality absent from every tile contributes nothing anywhere.
pub fn joint_batch_gradients(
    model: &Model,
    batch: &[&NormalizedTile],
    mode: Mode,
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(LabError::Config("empty training batch".into()));
    }
    let batch_len = batch.len() as f64;
    // Tiles supervising each modality, then the batch-present set M.
    let mut supervision_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &model.schema {
        let count = batch
            .iter()
            .filter(|nt| modality_contributes(nt, &m.name))
            .count();
        if count > 0 {
            supervision_counts.insert(m.name.as_str(), count);
        }
    }
    let present_modalities = supervision_counts.len() as f64;

    let mut encoder_grad = GradVector::zeros(model.encoder.len());
    let mut task_grad = GradVector::zeros(model.task_decoder.len());
    let mut recon_grad = GradVector::zeros(model.modality_decoder.len());
    let mut task_loss_sum = 0.0;
    let mut recon_objective = 0.0;

    for nt in batch {
        let mut tape = Tape::new();
        let theta = bind_store(&mut tape, &model.encoder)?;
        let g = bind_store(&mut tape, &model.task_decoder)?;
        let alpha = bind_store(&mut tape, &model.modality_decoder)?;
        let graph = build_tile_graph(&mut tape, model, &theta, Some(&g), Some(&alpha), nt)?;
        let task_loss = graph
            .task_loss
            .expect("task branch requested, so the loss node exists");
        task_loss_sum += tape.value(task_loss).item()?;

        // Task side, weighted to contribute its share of the batch mean.
        // Each objective gets its own backward pass with the gradient
        // buffers cleared in between — the encoder reads both passes, each
        // decoder only its own.
        let scaled_task = tape.scale(task_loss, 1.0 / batch_len)?;
        tape.backward(scaled_task)?;
        if mode == Mode::Finetune {
            encoder_grad.add_scaled(&extract_grad(&tape, &model.encoder, &theta)?, 1.0)?;
        }
        task_grad.add_scaled(&extract_grad(&tape, &model.task_decoder, &g)?, 1.0)?;
        tape.reset_grads();

        // Reconstruction side: Σ_m R_{m,tile} / (|M| · n_m), summed over
        // tiles this equals the mean over modalities of batch-mean losses.
        let mut recon_root = None;
        for (name, loss) in &graph.recon_losses {
            let per_tile_weight =
                1.0 / (present_modalities * supervision_counts[name.as_str()] as f64);
            recon_objective += tape.value(*loss).item()? * per_tile_weight;
            let scaled = tape.scale(*loss, per_tile_weight)?;
            recon_root = Some(match recon_root {
                None => scaled,
                Some(acc) => tape.add(acc, scaled)?,
            });
        }
        if let Some(root) = recon_root {
            tape.backward(root)?;
            if mode == Mode::Finetune {
                encoder_grad.add_scaled(&extract_grad(&tape, &model.encoder, &theta)?, 1.0)?;
            }
            recon_grad.add_scaled(&extract_grad(&tape, &model.modality_decoder, &alpha)?, 1.0)?;
        }
    }

    Ok(BatchGradients {
        encoder: (mode == Mode::Finetune).then_some(encoder_grad),
        task_decoder: task_grad,
        modality_decoder: recon_grad,
        mean_task_loss: task_loss_sum / batch_len,
        recon_objective,
    })
}

/// Jointly train the model on a training subset, selecting the checkpoint
/// with the best validation task metric.
///
/// Tiles are normalized once with the split's embedded statistics. Every
/// epoch reshuffles the training tiles with a generator seeded by
/// `config.seed + epoch`, walks them in batches, and then scores the
/// validation split; the best-scoring epoch's parameters become the
/// checkpoint (earliest epoch wins ties). A non-finite loss or parameter
/// aborts with a divergence diagnostic.
pub fn joint_train(
    ds: &Dataset,
    splits: &SplitSet,
    subset: Subset,
    init: &Model,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let train_ids = splits.train_ids(subset);
    if train_ids.is_empty() {
        return Err(LabError::Split("training subset is empty".into()));
    }
    if splits.validation.is_empty() {
        return Err(LabError::Split(
            "validation split is empty, cannot select a checkpoint".into(),
        ));
    }

    let normalized = normalize_many(ds, train_ids.iter().chain(&splits.validation), splits)?;
    let validation_tiles: Vec<&NormalizedTile> =
        splits.validation.iter().map(|id| &normalized[id]).collect();

    let steps_per_epoch = train_ids.len().div_ceil(config.batch_size);
    let schedule = Schedule::new(
        config.warmup_epochs * steps_per_epoch,
        config.epochs * steps_per_epoch,
        config.max_lr,
        config.min_lr,
    );

    let mut model = init.clone();
    let mut encoder_opt = AdamW::new(model.encoder.len());
    let mut task_opt = AdamW::new(model.task_decoder.len());
    let mut recon_opt = AdamW::new(model.modality_decoder.len());

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut global_step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order = train_ids.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_task_loss = 0.0;
        let mut epoch_recon_loss = 0.0;
        let mut last_lr = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&NormalizedTile> = chunk.iter().map(|id| &normalized[id]).collect();
            let grads = joint_batch_gradients(&model, &batch, config.mode)
                .map_err(|e| as_divergence(e, epoch, step))?;
            let lr = schedule.lr_at(global_step);
            let step_result = (|| -> Result<()> {
                if let Some(encoder) = &grads.encoder {
                    encoder_opt.step(
                        model.encoder.data_mut(),
                        &encoder.values,
                        lr,
                        config.weight_decay,
                    )?;
                }
                task_opt.step(
                    model.task_decoder.data_mut(),
                    &grads.task_decoder.values,
                    lr,
                    config.weight_decay,
                )?;
                recon_opt.step(
                    model.modality_decoder.data_mut(),
                    &grads.modality_decoder.values,
                    lr,
                    config.weight_decay,
                )?;
                Ok(())
            })();
            step_result.map_err(|e| as_divergence(e, epoch, step))?;

            epoch_task_loss += grads.mean_task_loss * chunk.len() as f64;
            epoch_recon_loss += grads.recon_objective;
            last_lr = lr;
            global_step += 1;
        }

        let validation_metric = validation_score(&model, ds, &splits.validation, &validation_tiles)
            .map_err(|e| as_divergence(e, epoch, steps_per_epoch))?;
        log.push(EpochLog {
            epoch,
            lr: last_lr,
            task_loss: epoch_task_loss / train_ids.len() as f64,
            recon_loss: epoch_recon_loss / steps_per_epoch as f64,
            validation_metric,
        });
        let improved = match &best {
            None => true,
            Some((best_metric, _, _)) => validation_metric > *best_metric,
        };
        if improved {
            best = Some((validation_metric, epoch, model.clone()));
        }
    }

    let (validation_metric, epoch, best_model) =
        best.expect("at least one epoch ran, so a best checkpoint exists");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: best_model,
            train_seed: config.seed,
            epoch,
            validation_metric,
        },
        log,
    })
}

/// Normalize a set of tiles once, keyed by id, using the split statistics.
fn normalize_many<'a>(
    ds: &Dataset,
    ids: impl Iterator<Item = &'a u64>,
    splits: &SplitSet,
) -> Result<BTreeMap<u64, NormalizedTile>> {
    let mut out = BTreeMap::new();
    for &id in ids {
        if out.contains_key(&id) {
            continue;
        }
        let tile = ds
            .tile_by_id(id)
            .ok_or_else(|| LabError::Split(format!("split references unknown tile {id}")))?;
        out.insert(
            id,
            normalize_tile(tile, &ds.schema, ds.tile_size, &splits.norm_stats)?,
        );
    }
    Ok(out)
}

/// Validation task metric from already-normalized tiles.
fn validation_score(
    model: &Model,
    ds: &Dataset,
    ids: &[u64],
    tiles: &[&NormalizedTile],
) -> Result<f64> {
    let mut preds = Vec::with_capacity(tiles.len());
    for nt in tiles {
        preds.push(model.predict(nt)?.data().to_vec());
    }
    task_metric_from_predictions(ds, ids, &preds)
}

fn as_divergence(e: LabError, epoch: usize, step: usize) -> LabError {
    match e {
        LabError::NonFinite { .. } => LabError::Diverged { epoch, step },
        other => other,
    }
}
