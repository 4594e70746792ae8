//! Turning per-tile predictions into a single task metric for a split:
//! coefficient of determination for regression tasks (pixel labels pooled
//! across tiles), mean average precision for multi-label tagging.

use crate::data::stats::{normalize_tile, NormStats};
use crate::data::tile::{Dataset, Label, TaskKind, Tile, PIXEL_LABEL_NO_DATA};
use crate::error::{LabError, Result};
use crate::metrics::{mean_average_precision, r_squared};
use crate::model::Model;

fn tile<'a>(ds: &'a Dataset, id: u64) -> Result<&'a Tile> {
    ds.tile_by_id(id)
        .ok_or_else(|| LabError::Dataset(format!("tile {id} not in dataset")))
}

/// Flat task predictions for the given tiles, in the order of `ids`.
pub fn predict_tiles(
    model: &Model,
    ds: &Dataset,
    stats: &NormStats,
    ids: &[u64],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let t = tile(ds, id)?;
        let nt = normalize_tile(t, &ds.schema, ds.tile_size, stats)?;
        let pred = model.predict(&nt)?;
        out.push(pred.data().to_vec());
    }
    Ok(out)
}

/// Task metric over a split given per-tile predictions aligned with `ids`.
/// Higher is better for every task kind.
pub fn task_metric_from_predictions(
    ds: &Dataset,
    ids: &[u64],
    predictions: &[Vec<f64>],
) -> Result<f64> {
    if ids.len() != predictions.len() {
        return Err(LabError::Metric(format!(
            "{} tiles but {} predictions",
            ids.len(),
            predictions.len()
        )));
    }
    match ds.task {
        TaskKind::TileRegression => {
            let mut obs = Vec::with_capacity(ids.len());
            let mut pred = Vec::with_capacity(ids.len());
            for (&id, p) in ids.iter().zip(predictions) {
                let Label::Scalar(y) = tile(ds, id)?.label else {
                    return Err(LabError::Dataset(format!("tile {id}: label is not a scalar")));
                };
                expect_len(id, p, 1)?;
                obs.push(y);
                pred.push(p[0]);
            }
            r_squared(&obs, &pred)
        }
        TaskKind::PixelRegression => {
            // Labeled pixels of every tile pool into one regression sample.
            let mut obs = Vec::new();
            let mut pred = Vec::new();
            for (&id, p) in ids.iter().zip(predictions) {
                let t = tile(ds, id)?;
                let Label::Grid(grid) = &t.label else {
                    return Err(LabError::Dataset(format!("tile {id}: label is not a grid")));
                };
                expect_len(id, p, grid.len())?;
                for (y, f) in grid.iter().zip(p) {
                    if *y != PIXEL_LABEL_NO_DATA {
                        obs.push(*y);
                        pred.push(*f);
                    }
                }
            }
            r_squared(&obs, &pred)
        }
        TaskKind::MultiLabel { classes } => {
            let mut labels_by_class = vec![Vec::with_capacity(ids.len()); classes];
            let mut scores_by_class = vec![Vec::with_capacity(ids.len()); classes];
            for (&id, p) in ids.iter().zip(predictions) {
                let Label::MultiLabel(bits) = &tile(ds, id)?.label else {
                    return Err(LabError::Dataset(format!(
                        "tile {id}: label is not a tag vector"
                    )));
                };
                expect_len(id, p, classes)?;
                for c in 0..classes {
                    labels_by_class[c].push(bits[c]);
                    scores_by_class[c].push(p[c]);
                }
            }
            Ok(mean_average_precision(&labels_by_class, &scores_by_class)?.value)
        }
    }
}

/// Task metric of a model over a split: predict every tile, then score.
pub fn task_metric(model: &Model, ds: &Dataset, stats: &NormStats, ids: &[u64]) -> Result<f64> {
    let preds = predict_tiles(model, ds, stats, ids)?;
    task_metric_from_predictions(ds, ids, &preds)
}

fn expect_len(id: u64, pred: &[f64], want: usize) -> Result<()> {
    if pred.len() != want {
        return Err(LabError::Shape(format!(
            "tile {id}: prediction length {} but task needs {want}",
            pred.len()
        )));
    }
    Ok(())
}
