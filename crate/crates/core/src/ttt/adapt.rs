//! The adaptation arithmetic: batched per-modality reconstruction losses,
//! per-modality encoder gradients, gradient normalization and averaging,
//! and the encoder update step.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::stats::NormalizedTile;
use crate::error::{LabError, Result};
use crate::model::forward::{build_tile_graph, extract_grad};
use crate::model::{bind_store, Model, ParamStore};
use crate::tensor::{GradVector, Tape};

/// Gradient norms at or below this threshold are treated as silent: a
/// perfectly reconstructed modality stops contributing instead of raising
/// a division-by-zero.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-30;

/// Per-modality batch reconstruction losses. A modality's loss is the mean
/// over the tiles that actually supervise it; modalities supervising no
/// tile in the batch are flagged absent instead of contributing zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchReconLosses {
    pub per_modality: BTreeMap<String, f64>,
    pub absent: BTreeSet<String>,
}

fn batch_label(batch: &[&NormalizedTile]) -> String {
    batch
        .iter()
        .map(|nt| nt.id.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Per-loss-node callback used by [`batch_pass`]: tape, bound encoder,
/// modality name, loss node.
type LossHook<'a> = &'a mut dyn FnMut(
    &mut Tape,
    &crate::model::BoundStore,
    &str,
    crate::tensor::ValueId,
) -> Result<()>;

/// Accumulate per-modality sums over a batch, optionally also collecting
/// per-tile encoder gradients of each modality's loss.
fn batch_pass(
    model: &Model,
    batch: &[&NormalizedTile],
    mut on_loss_node: Option<LossHook<'_>>,
) -> Result<BatchReconLosses> {
    if batch.is_empty() {
        return Err(LabError::Config("empty adaptation batch".into()));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for nt in batch {
        let mut tape = Tape::new();
        let theta = bind_store(&mut tape, &model.encoder)?;
        let alpha = bind_store(&mut tape, &model.modality_decoder)?;
        let graph = build_tile_graph(&mut tape, model, &theta, None, Some(&alpha), nt)?;
        for (name, loss) in &graph.recon_losses {
            let value = tape.value(*loss).item()?;
            let entry = sums.entry(name.clone()).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
            if let Some(hook) = on_loss_node.as_deref_mut() {
                hook(&mut tape, &theta, name, *loss)?;
            }
        }
    }
    if sums.is_empty() {
        return Err(LabError::AllModalitiesAbsent(batch_label(batch)));
    }
    let absent = model
        .schema
        .iter()
        .map(|m| m.name.clone())
        .filter(|name| !sums.contains_key(name))
        .collect();
    let per_modality = sums
        .into_iter()
        .map(|(name, (sum, count))| (name, sum / count as f64))
        .collect();
    Ok(BatchReconLosses {
        per_modality,
        absent,
    })
}

/// Per-modality reconstruction losses of a batch, averaged over the tiles
/// where each modality is present. Errors when no modality supervises any
/// tile of the batch.
pub fn batch_reconstruction_losses(
    model: &Model,
    batch: &[&NormalizedTile],
) -> Result<BatchReconLosses> {
    batch_pass(model, batch, None)
}

/// Encoder gradient of each modality's batch loss, alongside the losses.
///
/// For modality m the batch loss is the mean over its supervising tiles,
/// so its gradient is the same mean of per-tile gradients, accumulated in
/// batch order. Each per-tile, per-modality backward pass touches only
/// that loss's ancestors, so absent modalities cost nothing.
pub fn per_modality_encoder_gradients(
    model: &Model,
    batch: &[&NormalizedTile],
) -> Result<(BTreeMap<String, GradVector>, BatchReconLosses)> {
    let mut grads: BTreeMap<String, GradVector> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let encoder_len = model.encoder.len();
    let encoder = model.encoder.clone();
    let losses = {
        let mut hook = |tape: &mut Tape,
                        theta: &crate::model::BoundStore,
                        name: &str,
                        loss: crate::tensor::ValueId|
         -> Result<()> {
            tape.reset_grads();
            tape.backward(loss)?;
            let tile_grad = extract_grad(tape, &encoder, theta)?;
            grads
                .entry(name.to_string())
                .or_insert_with(|| GradVector::zeros(encoder_len))
                .add_scaled(&tile_grad, 1.0)?;
            *counts.entry(name.to_string()).or_insert(0) += 1;
            Ok(())
        };
        batch_pass(model, batch, Some(&mut hook))?
    };
    for (name, grad) in grads.iter_mut() {
        grad.scale(1.0 / counts[name] as f64);
    }
    Ok((grads, losses))
}

/// Mean of unit-normalized gradients over the modalities that still carry
/// signal: each gradient is divided by its global Euclidean norm, gradients
/// at or below [`ZERO_NORM_THRESHOLD`] are skipped as silent, and the rest
/// are averaged. Returns the direction and how many modalities contributed;
/// with no contributors the direction is the zero vector.
pub fn normalized_mean_gradient(
    gradients: &BTreeMap<String, GradVector>,
    len: usize,
) -> Result<(GradVector, usize)> {
    let mut mean = GradVector::zeros(len);
    let mut contributing = 0usize;
    for grad in gradients.values() {
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(LabError::NonFinite {
                op: "gradient_norm",
            });
        }
        if norm <= ZERO_NORM_THRESHOLD {
            continue;
        }
        mean.add_scaled(grad, 1.0 / norm)?;
        contributing += 1;
    }
    if contributing > 0 {
        mean.scale(1.0 / contributing as f64);
    }
    Ok((mean, contributing))
}

/// One adaptation step: encoder parameters move against the direction,
/// scaled by the adaptation learning rate. The decoders are not touched.
pub fn ttt_update(encoder: &mut ParamStore, direction: &GradVector, learning_rate: f64) -> Result<()> {
    if direction.len() != encoder.len() {
        return Err(LabError::Shape(format!(
            "direction length {} does not match encoder length {}",
            direction.len(),
            encoder.len()
        )));
    }
    for (p, d) in encoder.data_mut().iter_mut().zip(&direction.values) {
        *p -= learning_rate * d;
        if !p.is_finite() {
            return Err(LabError::NonFinite { op: "ttt_update" });
        }
    }
    Ok(())
}

/// Reconstruction losses recorded when one adaptation step was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptStep {
    pub losses: BatchReconLosses,
    /// Modalities whose normalized gradients entered the direction.
    pub contributing: usize,
}

/// Run `iterations` adaptation steps on `model`'s encoder in place, driven
/// by the batch's reconstruction losses. Returns the per-step records.
/// The task decoder and the modality decoder stay bitwise frozen.
pub fn adapt_encoder(
    model: &mut Model,
    batch: &[&NormalizedTile],
    learning_rate: f64,
    iterations: usize,
) -> Result<Vec<AdaptStep>> {
    let mut steps = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (grads, losses) = per_modality_encoder_gradients(model, batch)?;
        let (direction, contributing) = normalized_mean_gradient(&grads, model.encoder.len())?;
        ttt_update(&mut model.encoder, &direction, learning_rate)?;
        steps.push(AdaptStep {
            losses,
            contributing,
        });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate::{generate_world, WorldConfig};
    use crate::data::stats::{compute_norm_stats, normalize_tile};
    use crate::data::tile::{Dataset, TaskKind};
    use crate::model::{init_model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(tiles: usize, seed: u64) -> (Dataset, Model, Vec<NormalizedTile>) {
        let cfg = WorldConfig {
            tiles,
            tile_size: 8,
            task: TaskKind::TileRegression,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, seed).unwrap();
        let ids: Vec<u64> = ds.tiles.iter().map(|t| t.id).collect();
        let stats = compute_norm_stats(&ds, &ids).unwrap();
        let nts: Vec<NormalizedTile> = ds
            .tiles
            .iter()
            .map(|t| normalize_tile(t, &ds.schema, ds.tile_size, &stats).unwrap())
            .collect();
        let model = init_model(
            ModelConfig {
                embed_dim: 16,
                ..ModelConfig::default()
            },
            ds.schema.clone(),
            ds.tile_size,
            ds.task.clone(),
            seed,
        )
        .unwrap();
        (ds, model, nts)
    }

    #[test]
    fn identical_tiles_give_the_single_tile_loss() {
        let (_, model, nts) = setup(4, 23);
        let single = batch_reconstruction_losses(&model, &[&nts[0]]).unwrap();
        let repeated = batch_reconstruction_losses(&model, &[&nts[0], &nts[0], &nts[0]]).unwrap();
        assert_eq!(single.per_modality, repeated.per_modality);
        assert_eq!(single.absent, repeated.absent);
    }

    #[test]
    fn perfect_decoder_gives_zero_loss() {
        let (_, mut model, nts) = setup(8, 29);
        // A tile-scale continuous modality with zero weights and the bias
        // set to the tile's own normalized target reconstructs perfectly.
        let nt = nts
            .iter()
            .find(|n| n.values.contains_key("precipitation"))
            .unwrap();
        let target = nt.values["precipitation"].clone();
        let w_len = model.modality_decoder.segment("w_precipitation").unwrap().len();
        let (w_off, b_off) = {
            let w = model.modality_decoder.segment("w_precipitation").unwrap();
            let b = model.modality_decoder.segment("b_precipitation").unwrap();
            (w.offset, b.offset)
        };
        let data = model.modality_decoder.data_mut();
        data[w_off..w_off + w_len].fill(0.0);
        data[b_off..b_off + target.len()].copy_from_slice(&target);
        let losses = batch_reconstruction_losses(&model, &[nt]).unwrap();
        assert!(losses.per_modality["precipitation"] < 1e-24);
    }

    #[test]
    fn batch_losses_match_per_tile_oracle() {
        let (_, model, nts) = setup(9, 31);
        let batch: Vec<&NormalizedTile> = nts.iter().take(8).collect();
        let got = batch_reconstruction_losses(&model, &batch).unwrap();
        // Oracle: loop tiles, query each modality loss independently.
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for nt in &batch {
            let emb = model.encode(nt).unwrap();
            for (name, recon) in model.decode_modalities(&emb).unwrap() {
                if let Some(loss) = model.modality_loss(&name, &recon, nt).unwrap() {
                    let e = sums.entry(name.clone()).or_insert((0.0, 0));
                    e.0 += loss;
                    e.1 += 1;
                }
            }
        }
        assert_eq!(got.per_modality.len(), sums.len());
        for (name, (sum, count)) in sums {
            let want = sum / count as f64;
            let have = got.per_modality[&name];
            assert!(
                (have - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "{name}: {have} vs {want}"
            );
        }
    }

    #[test]
    fn absent_modalities_are_flagged_not_zeroed() {
        let (_, model, mut nts) = setup(4, 37);
        for nt in &mut nts {
            nt.missing.insert("canopy".into());
            nt.values.remove("canopy");
            nt.valid.remove("canopy");
        }
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let losses = batch_reconstruction_losses(&model, &batch).unwrap();
        assert!(losses.absent.contains("canopy"));
        assert!(!losses.per_modality.contains_key("canopy"));
    }

    #[test]
    fn fully_absent_batch_is_an_error() {
        let (_, model, mut nts) = setup(6, 41);
        nts.truncate(2);
        // Erase every reconstruction target. The encoder inputs must keep
        // their values for the forward pass, so they are removed from
        // supervision by masking every entry invalid instead.
        for nt in &mut nts {
            let names: Vec<String> = nt.values.keys().cloned().collect();
            for name in names {
                if model.config.input_modalities.contains(&name) {
                    for v in nt.valid.get_mut(&name).unwrap() {
                        *v = false;
                    }
                } else {
                    nt.missing.insert(name.clone());
                    nt.values.remove(&name);
                    nt.valid.remove(&name);
                }
            }
        }
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let err = batch_reconstruction_losses(&model, &batch).unwrap_err();
        assert!(matches!(err, LabError::AllModalitiesAbsent(_)));
    }

    #[test]
    fn single_modality_direction_is_the_unit_gradient() {
        let mut grads = BTreeMap::new();
        grads.insert("only".to_string(), GradVector {
            values: vec![3.0, 4.0],
        });
        let (mean, contributing) = normalized_mean_gradient(&grads, 2).unwrap();
        assert_eq!(contributing, 1);
        assert!((mean.values[0] - 0.6).abs() < 1e-15);
        assert!((mean.values[1] - 0.8).abs() < 1e-15);
        assert!((mean.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_gradients_cancel() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), GradVector {
            values: vec![1.0, -2.0, 0.5],
        });
        grads.insert("b".to_string(), GradVector {
            values: vec![-1.0, 2.0, -0.5],
        });
        let (mean, contributing) = normalized_mean_gradient(&grads, 3).unwrap();
        assert_eq!(contributing, 2);
        assert!(mean.norm() < 1e-15);
    }

    #[test]
    fn direction_matches_normalize_then_average_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut grads = BTreeMap::new();
        for name in ["x", "y", "z"] {
            grads.insert(
                name.to_string(),
                GradVector {
                    values: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                },
            );
        }
        let (mean, contributing) = normalized_mean_gradient(&grads, 5).unwrap();
        assert_eq!(contributing, 3);
        for i in 0..5 {
            let want: f64 = grads
                .values()
                .map(|g| g.values[i] / g.norm())
                .sum::<f64>()
                / 3.0;
            assert!((mean.values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_norm_gradients_are_skipped() {
        let mut grads = BTreeMap::new();
        grads.insert("live".to_string(), GradVector {
            values: vec![0.0, 5.0],
        });
        grads.insert("silent".to_string(), GradVector { values: vec![0.0, 0.0] });
        let (mean, contributing) = normalized_mean_gradient(&grads, 2).unwrap();
        assert_eq!(contributing, 1);
        assert!((mean.values[1] - 1.0).abs() < 1e-15);
        // Every modality silent: zero direction, zero contributors.
        let mut all_silent = BTreeMap::new();
        all_silent.insert("s".to_string(), GradVector { values: vec![0.0] });
        let (mean, contributing) = normalized_mean_gradient(&all_silent, 1).unwrap();
        assert_eq!(contributing, 0);
        assert_eq!(mean.values, vec![0.0]);
    }

    #[test]
    fn zero_direction_update_is_identity() {
        let (_, mut model, _) = setup(2, 47);
        let before = model.encoder.checksum();
        let zero = GradVector::zeros(model.encoder.len());
        ttt_update(&mut model.encoder, &zero, 1e-2).unwrap();
        assert_eq!(model.encoder.checksum(), before);
    }

    #[test]
    fn single_modality_step_length_is_the_learning_rate() {
        let (_, mut model, nts) = setup(8, 53);
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let (grads, _) = per_modality_encoder_gradients(&model, &batch).unwrap();
        // Keep only one modality's gradient: the direction is unit-norm,
        // so the parameter step has length exactly the learning rate.
        let mut single = BTreeMap::new();
        let (name, grad) = grads.into_iter().next().unwrap();
        single.insert(name, grad);
        let (direction, _) = normalized_mean_gradient(&single, model.encoder.len()).unwrap();
        let before = model.encoder.data().to_vec();
        ttt_update(&mut model.encoder, &direction, 1e-2).unwrap();
        let moved: f64 = model
            .encoder
            .data()
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((moved - 1e-2).abs() < 1e-12, "step length {moved}");
    }

    #[test]
    fn two_modality_update_matches_explicit_summation_oracle() {
        let (_, mut model, nts) = setup(8, 59);
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let (grads, _) = per_modality_encoder_gradients(&model, &batch).unwrap();
        let mut pair = BTreeMap::new();
        let mut iter = grads.into_iter();
        let (n1, g1) = iter.next().unwrap();
        let (n2, g2) = iter.next().unwrap();
        pair.insert(n1, g1.clone());
        pair.insert(n2, g2.clone());
        let (direction, contributing) =
            normalized_mean_gradient(&pair, model.encoder.len()).unwrap();
        assert_eq!(contributing, 2);
        let lambda = 1e-2;
        let before = model.encoder.data().to_vec();
        ttt_update(&mut model.encoder, &direction, lambda).unwrap();
        let (norm1, norm2) = (g1.norm(), g2.norm());
        for j in 0..before.len() {
            let want = before[j]
                - lambda / 2.0 * (g1.values[j] / norm1 + g2.values[j] / norm2);
            let got = model.encoder.data()[j];
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "parameter {j}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn per_modality_gradients_match_separate_graph_backward() {
        let (_, model, nts) = setup(6, 61);
        let batch: Vec<&NormalizedTile> = nts.iter().take(4).collect();
        let (grads, _) = per_modality_encoder_gradients(&model, &batch).unwrap();
        // Oracle: per modality, fresh tapes per tile, averaged by hand.
        for (name, got) in &grads {
            let mut want = GradVector::zeros(model.encoder.len());
            let mut count = 0usize;
            for nt in &batch {
                let mut tape = Tape::new();
                let theta = bind_store(&mut tape, &model.encoder).unwrap();
                let alpha = bind_store(&mut tape, &model.modality_decoder).unwrap();
                let graph =
                    build_tile_graph(&mut tape, &model, &theta, None, Some(&alpha), nt).unwrap();
                if let Some((_, loss)) =
                    graph.recon_losses.iter().find(|(n, _)| n == name)
                {
                    tape.backward(*loss).unwrap();
                    want.add_scaled(&extract_grad(&tape, &model.encoder, &theta).unwrap(), 1.0)
                        .unwrap();
                    count += 1;
                }
            }
            want.scale(1.0 / count as f64);
            for i in 0..want.len() {
                assert!(
                    (got.values[i] - want.values[i]).abs() <= 1e-12 * (1.0 + want.values[i].abs()),
                    "{name} component {i}"
                );
            }
        }
    }

    #[test]
    fn normalized_gradients_have_unit_norm() {
        let (_, model, nts) = setup(8, 67);
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let (grads, _) = per_modality_encoder_gradients(&model, &batch).unwrap();
        for (name, grad) in &grads {
            let norm = grad.norm();
            if norm > ZERO_NORM_THRESHOLD {
                let mut unit = grad.clone();
                unit.scale(1.0 / norm);
                assert!(
                    (unit.norm() - 1.0).abs() < 1e-10,
                    "{name} unit norm {}",
                    unit.norm()
                );
            }
        }
    }

    #[test]
    fn rescaling_a_modality_changes_its_loss_but_not_its_contribution_norm() {
        let (_, model, mut nts) = setup(8, 71);
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let (_, losses_before) = per_modality_encoder_gradients(&model, &batch).unwrap();
        for nt in &mut nts {
            if let Some(values) = nt.values.get_mut("s1") {
                for v in values.iter_mut() {
                    *v *= 10.0;
                }
            }
        }
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let (grads_after, losses_after) = per_modality_encoder_gradients(&model, &batch).unwrap();
        assert!(
            (losses_before.per_modality["s1"] - losses_after.per_modality["s1"]).abs() > 1e-6,
            "rescaling should move the raw loss"
        );
        let grad = &grads_after["s1"];
        let mut unit = grad.clone();
        unit.scale(1.0 / grad.norm());
        assert!((unit.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn adapt_encoder_moves_theta_and_freezes_decoders() {
        let (_, mut model, nts) = setup(8, 73);
        let batch: Vec<&NormalizedTile> = nts.iter().collect();
        let theta_before = model.encoder.checksum();
        let g_before = model.task_decoder.checksum();
        let alpha_before = model.modality_decoder.checksum();
        let steps = adapt_encoder(&mut model, &batch, 1e-2, 3).unwrap();
        assert_eq!(steps.len(), 3);
        assert_ne!(model.encoder.checksum(), theta_before);
        assert_eq!(model.task_decoder.checksum(), g_before);
        assert_eq!(model.modality_decoder.checksum(), alpha_before);
        for step in &steps {
            assert!(step.contributing > 0);
            for loss in step.losses.per_modality.values() {
                assert!(loss.is_finite());
            }
        }
    }
}
