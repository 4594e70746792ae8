//! Tape builders for the encoder, task head, and reconstruction heads.
//!
//! Builders compose on one tape so a single backward pass crosses the
//! whole network. Parameter stores bind as one leaf per segment; gradient
//! extraction concatenates segment gradients back into store layout.

use crate::data::schema::{Kind, ModalitySchema, Scale};
use crate::data::stats::{modality_contributes, NormalizedTile};
use crate::data::tile::{Label, TaskKind, PIXEL_LABEL_NO_DATA};
use crate::error::{LabError, Result};
use crate::model::params::ParamStore;
use crate::model::Model;
use crate::tensor::{GradVector, Tape, Tensor, ValueId};

/// Tape leaves for one parameter store, one per segment in store order.
pub struct BoundStore {
    ids: Vec<(String, ValueId)>,
}

impl BoundStore {
    pub fn id(&self, name: &str) -> Result<ValueId> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| LabError::Shape(format!("no bound segment {}", name)))
    }
}

pub fn bind_store(tape: &mut Tape, store: &ParamStore) -> Result<BoundStore> {
    let mut ids = Vec::with_capacity(store.segments().len());
    for seg in store.segments() {
        let t = store.tensor(&seg.name)?;
        ids.push((seg.name.clone(), tape.leaf(t)?));
    }
    Ok(BoundStore { ids })
}

/// Gradient with respect to a bound store, in store layout. Untouched
/// segments contribute zeros.
pub fn extract_grad(tape: &Tape, store: &ParamStore, bound: &BoundStore) -> Result<GradVector> {
    let mut values = Vec::with_capacity(store.len());
    for seg in store.segments() {
        let id = bound.id(&seg.name)?;
        values.extend_from_slice(&tape.grad_or_zeros(id));
    }
    Ok(GradVector { values })
}

/// Patch matrix of the encoder inputs: one row per patch (row-major over
/// the patch grid), columns ordered input modality, band, then pixel
/// row/column inside the patch. Input values are normalized with no-data
/// already zero-filled.
pub fn patchify(model: &Model, nt: &NormalizedTile) -> Result<Tensor> {
    let ts = model.tile_size;
    let p = model.config.patch_size;
    let g = ts / p;
    let hw = ts * ts;
    let mut rows = Vec::with_capacity(g * g * model.input_channels() * p * p);
    for pr in 0..g {
        for pc in 0..g {
            for name in &model.config.input_modalities {
                if nt.missing.contains(name) || !nt.values.contains_key(name) {
                    return Err(LabError::MissingInputModality(name.clone(), nt.id));
                }
                let vals = &nt.values[name];
                let bands = vals.len() / hw;
                for b in 0..bands {
                    for dy in 0..p {
                        for dx in 0..p {
                            let y = pr * p + dy;
                            let x = pc * p + dx;
                            rows.push(vals[b * hw + y * ts + x]);
                        }
                    }
                }
            }
        }
    }
    Tensor::matrix(g * g, model.input_channels() * p * p, rows)
}

/// Patch embeddings (P x D): linear patch projection, tanh, then an affine
/// output layer.
pub fn build_encoder(
    tape: &mut Tape,
    model: &Model,
    theta: &BoundStore,
    nt: &NormalizedTile,
) -> Result<ValueId> {
    let x = tape.leaf(patchify(model, nt)?)?;
    let h = tape.matmul(x, theta.id("patch_w")?)?;
    let h = tape.add_row_bias(h, theta.id("patch_b")?)?;
    let a = tape.tanh(h)?;
    let e = tape.matmul(a, theta.id("hidden_w")?)?;
    tape.add_row_bias(e, theta.id("hidden_b")?)
}

/// Task prediction from patch embeddings. Tile-scalar and tag tasks pool
/// then layer-norm then project; the dense task upsamples the embedding
/// grid and applies a per-pixel affine.
pub fn build_task_head(
    tape: &mut Tape,
    model: &Model,
    g: &BoundStore,
    emb: ValueId,
) -> Result<ValueId> {
    match model.task {
        TaskKind::TileRegression | TaskKind::MultiLabel { .. } => {
            let pooled = tape.mean_axis0(emb)?;
            let ln = tape.layer_norm(pooled, g.id("ln_gamma")?, g.id("ln_beta")?, model.config.ln_eps)?;
            let out = tape.matmul(ln, g.id("head_w")?)?;
            tape.add_row_bias(out, g.id("head_b")?)
        }
        TaskKind::PixelRegression => {
            let grid = model.grid_size();
            let et = tape.transpose(emb)?;
            let u = tape.bilinear_upsample(et, grid, grid, model.tile_size, model.tile_size)?;
            let out = tape.matmul(g.id("head_w")?, u)?;
            tape.add_col_bias(out, g.id("head_b")?)
        }
    }
}

/// Main-task loss of a prediction node against a tile's label.
pub fn build_task_loss(
    tape: &mut Tape,
    task: &TaskKind,
    tile_id: u64,
    pred: ValueId,
    label: &Label,
) -> Result<ValueId> {
    match (task, label) {
        (TaskKind::TileRegression, Label::Scalar(y)) => tape.mse_masked(pred, &[*y], None),
        (TaskKind::PixelRegression, Label::Grid(grid)) => {
            let mask: Vec<bool> = grid.iter().map(|&v| v != PIXEL_LABEL_NO_DATA).collect();
            if !mask.iter().any(|&b| b) {
                return Err(LabError::NoSupervisedPixels(tile_id));
            }
            tape.mse_masked(pred, grid, Some(&mask))
        }
        (TaskKind::MultiLabel { .. }, Label::MultiLabel(bits)) => {
            let targets: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            tape.bce_with_logits(pred, &targets)
        }
        _ => Err(LabError::Dataset(format!(
            "tile {}: label does not match task {:?}",
            tile_id, task
        ))),
    }
}

/// Shared upsampled embedding (D x tile pixels) feeding every
/// reconstruction head.
pub fn build_upsampled(tape: &mut Tape, model: &Model, emb: ValueId) -> Result<ValueId> {
    let grid = model.grid_size();
    let et = tape.transpose(emb)?;
    tape.bilinear_upsample(et, grid, grid, model.tile_size, model.tile_size)
}

/// Reconstruction head for one modality. Pixel-scale groups read the
/// upsampled embedding; tile-scale groups read its spatial mean, which by
/// linearity of the head equals pooling the per-pixel reconstruction.
pub fn build_recon_head(
    tape: &mut Tape,
    m: &ModalitySchema,
    alpha: &BoundStore,
    upsampled: ValueId,
    pooled: ValueId,
) -> Result<ValueId> {
    let w = alpha.id(&format!("w_{}", m.name))?;
    let b = alpha.id(&format!("b_{}", m.name))?;
    let src = match m.scale {
        Scale::Pixel => upsampled,
        Scale::Tile => pooled,
    };
    let out = tape.matmul(w, src)?;
    tape.add_col_bias(out, b)
}

/// Reconstruction loss of one modality's head output on one tile:
/// masked MSE against normalized bands for continuous data, masked
/// softmax cross-entropy against class indices for categorical data.
/// None when the modality gives no supervision on this tile.
pub fn build_modality_loss(
    tape: &mut Tape,
    m: &ModalitySchema,
    recon: ValueId,
    nt: &NormalizedTile,
) -> Result<Option<ValueId>> {
    if !modality_contributes(nt, &m.name) {
        return Ok(None);
    }
    let values = &nt.values[&m.name];
    let valid = &nt.valid[&m.name];
    let loss = match m.kind {
        Kind::Continuous { .. } => tape.mse_masked(recon, values, Some(valid))?,
        Kind::Categorical { classes } => {
            let labels: Vec<usize> = values
                .iter()
                .map(|&v| {
                    let c = v as usize;
                    c.min(classes) // the sentinel index is masked anyway
                })
                .collect();
            tape.softmax_ce_masked(recon, &labels, Some(valid))?
        }
    };
    Ok(Some(loss))
}

/// Full per-tile graph: encoder, optional task branch, optional
/// reconstruction branch over every contributing modality in schema order.
pub struct TileGraph {
    pub emb: ValueId,
    pub task_pred: Option<ValueId>,
    pub task_loss: Option<ValueId>,
    /// (modality name, loss node), schema order, contributing only.
    pub recon_losses: Vec<(String, ValueId)>,
}

pub fn build_tile_graph(
    tape: &mut Tape,
    model: &Model,
    theta: &BoundStore,
    g: Option<&BoundStore>,
    alpha: Option<&BoundStore>,
    nt: &NormalizedTile,
) -> Result<TileGraph> {
    let emb = build_encoder(tape, model, theta, nt)?;
    let (task_pred, task_loss) = match g {
        Some(g) => {
            let pred = build_task_head(tape, model, g, emb)?;
            let loss = build_task_loss(tape, &model.task, nt.id, pred, &nt.label)?;
            (Some(pred), Some(loss))
        }
        None => (None, None),
    };
    let mut recon_losses = Vec::new();
    if let Some(alpha) = alpha {
        let upsampled = build_upsampled(tape, model, emb)?;
        let pooled = tape.mean_axis1(upsampled)?;
        for m in &model.schema {
            // Non-contributing modalities are skipped before their head is
            // even built, so absent data costs no forward work either.
            if !modality_contributes(nt, &m.name) {
                continue;
            }
            let recon = build_recon_head(tape, m, alpha, upsampled, pooled)?;
            if let Some(loss) = build_modality_loss(tape, m, recon, nt)? {
                recon_losses.push((m.name.clone(), loss));
            }
        }
    }
    Ok(TileGraph {
        emb,
        task_pred,
        task_loss,
        recon_losses,
    })
}
