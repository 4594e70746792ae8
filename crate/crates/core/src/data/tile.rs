//! Tiles, labels, and the in-memory dataset.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::schema::{Kind, ModalitySchema};
use crate::error::{LabError, Result};

/// Sentinel marking unlabeled pixels in dense pixel-label grids.
pub const PIXEL_LABEL_NO_DATA: f64 = -9999.0;

/// Main-task flavor of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    /// One real value per tile, squared-error loss.
    TileRegression,
    /// A real value per pixel with a no-data sentinel, squared-error loss
    /// over labeled pixels.
    PixelRegression,
    /// A set of binary tags per tile, binary cross-entropy loss.
    MultiLabel { classes: usize },
}

impl TaskKind {
    /// Stored f64 count for the label block of one tile.
    pub fn label_len(&self, tile_size: usize) -> usize {
        match self {
            TaskKind::TileRegression => 1,
            TaskKind::PixelRegression => tile_size * tile_size,
            TaskKind::MultiLabel { classes } => *classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TaskKind::MultiLabel { classes } = self {
            if *classes < 2 {
                return Err(LabError::Config(format!(
                    "multi-label task with {} classes",
                    classes
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth label of one tile, matching the dataset's task kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Scalar(f64),
    /// Row-major tile_size x tile_size grid; unlabeled pixels hold
    /// [`PIXEL_LABEL_NO_DATA`].
    Grid(Vec<f64>),
    MultiLabel(Vec<bool>),
}

/// One tile: location, per-modality raw values, and a label.
/// `values` holds an entry for every present modality; absent modalities
/// appear in `missing` instead. Raw values may contain the modality's
/// no-data sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub id: u64,
    pub lon: f64,
    pub lat: f64,
    pub missing: BTreeSet<String>,
    pub values: BTreeMap<String, Vec<f64>>,
    pub label: Label,
}

/// An in-memory dataset: schema plus tiles in strictly increasing id order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Vec<ModalitySchema>,
    pub tile_size: usize,
    pub task: TaskKind,
    pub seed: u64,
    pub tiles: Vec<Tile>,
}

impl Dataset {
    pub fn modality(&self, name: &str) -> Option<&ModalitySchema> {
        self.schema.iter().find(|m| m.name == name)
    }

    pub fn tile_by_id(&self, id: u64) -> Option<&Tile> {
        self.tiles
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tiles[i])
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(LabError::Dataset("tile_size is zero".into()));
        }
        self.task.validate()?;
        if self.schema.is_empty() {
            return Err(LabError::Dataset("empty schema".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.schema {
            m.validate()?;
            if !names.insert(m.name.clone()) {
                return Err(LabError::Schema(format!("duplicate modality {}", m.name)));
            }
        }
        let mut prev: Option<u64> = None;
        for tile in &self.tiles {
            if let Some(p) = prev {
                if tile.id <= p {
                    return Err(LabError::Dataset(format!(
                        "tile ids not strictly increasing at {}",
                        tile.id
                    )));
                }
            }
            prev = Some(tile.id);
            self.validate_tile(tile)?;
        }
        Ok(())
    }

    fn validate_tile(&self, tile: &Tile) -> Result<()> {
        if !tile.lon.is_finite()
            || !tile.lat.is_finite()
            || !(-180.0..=180.0).contains(&tile.lon)
            || !(-90.0..=90.0).contains(&tile.lat)
        {
            return Err(LabError::Dataset(format!(
                "tile {}: bad location ({}, {})",
                tile.id, tile.lon, tile.lat
            )));
        }
        for name in tile.values.keys().chain(tile.missing.iter()) {
            if self.modality(name).is_none() {
                return Err(LabError::Dataset(format!(
                    "tile {}: unknown modality {}",
                    tile.id, name
                )));
            }
        }
        for m in &self.schema {
            let present = tile.values.contains_key(&m.name);
            let absent = tile.missing.contains(&m.name);
            if present == absent {
                return Err(LabError::Dataset(format!(
                    "tile {}: modality {} must be exactly one of present or missing",
                    tile.id, m.name
                )));
            }
            if absent {
                continue;
            }
            let vals = &tile.values[&m.name];
            if vals.len() != m.values_len(self.tile_size) {
                return Err(LabError::Dataset(format!(
                    "tile {}: modality {} has {} values, expected {}",
                    tile.id,
                    m.name,
                    vals.len(),
                    m.values_len(self.tile_size)
                )));
            }
            match m.kind {
                Kind::Continuous { .. } => {
                    for &v in vals {
                        if !v.is_finite() {
                            return Err(LabError::Dataset(format!(
                                "tile {}: non-finite value in {}",
                                tile.id, m.name
                            )));
                        }
                    }
                }
                Kind::Categorical { classes } => {
                    for &v in vals {
                        if v.fract() != 0.0 || v < 0.0 || v > classes as f64 {
                            return Err(LabError::Dataset(format!(
                                "tile {}: class value {} outside 0..={} in {}",
                                tile.id, v, classes, m.name
                            )));
                        }
                    }
                }
            }
        }
        self.validate_label(tile)
    }

    fn validate_label(&self, tile: &Tile) -> Result<()> {
        let bad = |why: &str| {
            Err(LabError::Dataset(format!(
                "tile {}: {} for task {:?}",
                tile.id, why, self.task
            )))
        };
        match (&self.task, &tile.label) {
            (TaskKind::TileRegression, Label::Scalar(v)) => {
                if !v.is_finite() {
                    return bad("non-finite label");
                }
            }
            (TaskKind::PixelRegression, Label::Grid(g)) => {
                if g.len() != self.tile_size * self.tile_size {
                    return bad("wrong label grid size");
                }
                if !g
                    .iter()
                    .any(|&v| v != PIXEL_LABEL_NO_DATA && v.is_finite())
                {
                    return bad("label grid with no labeled pixel");
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return bad("non-finite label grid entry");
                }
            }
            (TaskKind::MultiLabel { classes }, Label::MultiLabel(bits)) => {
                if bits.len() != *classes {
                    return bad("wrong tag count");
                }
            }
            _ => return bad("label kind mismatch"),
        }
        Ok(())
    }
}
