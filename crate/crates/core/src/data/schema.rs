//! Modality schema: what each data stream looks like and how it is stored.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Spatial resolution of a modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// One value per band per pixel of the tile.
    Pixel,
    /// One value per band for the whole tile.
    Tile,
}

/// Value semantics of a modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Real-valued bands, normalized before use.
    Continuous { bands: usize },
    /// A single stored band of class indices in 0..classes; the index
    /// `classes` itself is the no-data marker.
    Categorical { classes: usize },
}

/// One modality's schema entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySchema {
    pub name: String,
    pub scale: Scale,
    pub kind: Kind,
    /// Sentinel marking unobserved values inside otherwise present data.
    /// None means the modality is always fully observed (derived encodings).
    /// For categorical modalities this must equal `classes`.
    pub no_data: Option<f64>,
}

impl ModalitySchema {
    /// Bands as stored in a tile: class indices occupy one band.
    pub fn stored_bands(&self) -> usize {
        match self.kind {
            Kind::Continuous { bands } => bands,
            Kind::Categorical { .. } => 1,
        }
    }

    /// Channels the reconstruction head emits for this modality:
    /// band values for continuous data, class logits for categorical.
    pub fn recon_channels(&self) -> usize {
        match self.kind {
            Kind::Continuous { bands } => bands,
            Kind::Categorical { classes } => classes,
        }
    }

    /// Stored f64 count for one tile.
    pub fn values_len(&self, tile_size: usize) -> usize {
        match self.scale {
            Scale::Pixel => self.stored_bands() * tile_size * tile_size,
            Scale::Tile => self.stored_bands(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(LabError::Schema("modality with empty name".into()));
        }
        match self.kind {
            Kind::Continuous { bands } => {
                if bands == 0 {
                    return Err(LabError::Schema(format!("{}: zero bands", self.name)));
                }
                if let Some(nd) = self.no_data {
                    if !nd.is_finite() {
                        return Err(LabError::Schema(format!(
                            "{}: non-finite no-data sentinel",
                            self.name
                        )));
                    }
                }
            }
            Kind::Categorical { classes } => {
                if classes < 2 {
                    return Err(LabError::Schema(format!(
                        "{}: categorical with {} classes",
                        self.name, classes
                    )));
                }
                if self.no_data != Some(classes as f64) {
                    return Err(LabError::Schema(format!(
                        "{}: categorical no-data must be the class count {}",
                        self.name, classes
                    )));
                }
            }
        }
        Ok(())
    }
}

fn pixel_cont(name: &str, bands: usize, no_data: f64) -> ModalitySchema {
    ModalitySchema {
        name: name.into(),
        scale: Scale::Pixel,
        kind: Kind::Continuous { bands },
        no_data: Some(no_data),
    }
}

fn pixel_cat(name: &str, classes: usize) -> ModalitySchema {
    ModalitySchema {
        name: name.into(),
        scale: Scale::Pixel,
        kind: Kind::Categorical { classes },
        no_data: Some(classes as f64),
    }
}

fn tile_cont(name: &str, bands: usize, no_data: Option<f64>) -> ModalitySchema {
    ModalitySchema {
        name: name.into(),
        scale: Scale::Tile,
        kind: Kind::Continuous { bands },
        no_data,
    }
}

fn tile_cat(name: &str, classes: usize) -> ModalitySchema {
    ModalitySchema {
        name: name.into(),
        scale: Scale::Tile,
        kind: Kind::Categorical { classes },
        no_data: Some(classes as f64),
    }
}

/// The full twelve-modality schema used by the bundled worlds: optical and
/// radar imagery, terrain, canopy, two land-cover maps, climate summaries,
/// cyclic location/season encodings, and two ecological classifications.
pub fn default_schema() -> Vec<ModalitySchema> {
    vec![
        pixel_cont("s2", 12, 65535.0),
        pixel_cont("s1", 8, -9999.0),
        pixel_cont("dem", 2, -9999.0),
        pixel_cont("canopy", 2, 255.0),
        pixel_cat("dynamic_world", 9),
        pixel_cat("world_cover", 11),
        tile_cont("precipitation", 3, Some(-9999.0)),
        tile_cont("temperature", 9, Some(-9999.0)),
        tile_cont("geolocation", 4, None),
        tile_cont("month", 2, None),
        tile_cat("biome", 13),
        tile_cat("ecoregion", 846),
    ]
}

/// Total reconstruction channels across a schema.
pub fn total_recon_channels(schema: &[ModalitySchema]) -> usize {
    schema.iter().map(|m| m.recon_channels()).sum()
}
