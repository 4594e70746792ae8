//! Masked normalization statistics and normalized tile views.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::schema::{Kind, ModalitySchema, Scale};
use crate::data::tile::{Dataset, Label, Tile};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-band statistics for every continuous modality, computed over the
/// training tiles with no-data values excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Recorded so downstream consumers can audit which variance
    /// denominator produced these numbers.
    pub std_convention: String,
    pub per_modality: BTreeMap<String, Vec<BandStats>>,
}

/// Band values of one tile as stored: band-major for pixel modalities.
fn band_slice<'a>(vals: &'a [f64], band: usize, plane: usize) -> &'a [f64] {
    &vals[band * plane..(band + 1) * plane]
}

/// Mean and population standard deviation (divide by N) of masked values
/// of each band over the given tiles.
pub fn compute_norm_stats(ds: &Dataset, ids: &[u64]) -> Result<NormStats> {
    let mut per_modality = BTreeMap::new();
    for m in &ds.schema {
        let Kind::Continuous { bands } = m.kind else {
            continue;
        };
        let plane = match m.scale {
            Scale::Pixel => ds.tile_size * ds.tile_size,
            Scale::Tile => 1,
        };
        let mut stats = Vec::with_capacity(bands);
        for band in 0..bands {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &id in ids {
                let tile = ds
                    .tile_by_id(id)
                    .ok_or_else(|| LabError::Split(format!("unknown tile id {}", id)))?;
                let Some(vals) = tile.values.get(&m.name) else {
                    continue;
                };
                for &v in band_slice(vals, band, plane) {
                    if Some(v) != m.no_data {
                        sum += v;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(LabError::Dataset(format!(
                    "band {} of modality {} has no valid values over the training tiles",
                    band, m.name
                )));
            }
            let mean = sum / count as f64;
            let mut ss = 0.0;
            for &id in ids {
                let tile = ds.tile_by_id(id).expect("checked above");
                let Some(vals) = tile.values.get(&m.name) else {
                    continue;
                };
                for &v in band_slice(vals, band, plane) {
                    if Some(v) != m.no_data {
                        ss += (v - mean) * (v - mean);
                    }
                }
            }
            let std = (ss / count as f64).sqrt();
            if std == 0.0 {
                return Err(LabError::ZeroVariance {
                    modality: m.name.clone(),
                    band,
                });
            }
            stats.push(BandStats { mean, std });
        }
        per_modality.insert(m.name.clone(), stats);
    }
    Ok(NormStats {
        std_convention: "population".into(),
        per_modality,
    })
}

/// A tile ready for the model: continuous values standardized with no-data
/// filled by 0, categorical values passed through as class indices, and a
/// per-element validity mask alongside each present modality.
#[derive(Debug, Clone)]
pub struct NormalizedTile {
    pub id: u64,
    pub lon: f64,
    pub lat: f64,
    pub missing: BTreeSet<String>,
    pub values: BTreeMap<String, Vec<f64>>,
    pub valid: BTreeMap<String, Vec<bool>>,
    pub label: Label,
}

pub fn normalize_tile(
    tile: &Tile,
    schema: &[ModalitySchema],
    tile_size: usize,
    stats: &NormStats,
) -> Result<NormalizedTile> {
    let mut values = BTreeMap::new();
    let mut valid = BTreeMap::new();
    for m in schema {
        let Some(raw) = tile.values.get(&m.name) else {
            continue;
        };
        match m.kind {
            Kind::Continuous { bands } => {
                let band_stats = stats.per_modality.get(&m.name).ok_or_else(|| {
                    LabError::Dataset(format!("no normalization stats for {}", m.name))
                })?;
                if band_stats.len() != bands {
                    return Err(LabError::Dataset(format!(
                        "stats for {} cover {} bands, schema has {}",
                        m.name,
                        band_stats.len(),
                        bands
                    )));
                }
                let plane = raw.len() / bands;
                let mut v = vec![0.0; raw.len()];
                let mut ok = vec![false; raw.len()];
                for band in 0..bands {
                    let s = &band_stats[band];
                    for p in 0..plane {
                        let i = band * plane + p;
                        if Some(raw[i]) == m.no_data {
                            // leave 0.0 / false
                        } else {
                            v[i] = (raw[i] - s.mean) / s.std;
                            ok[i] = true;
                        }
                    }
                }
                values.insert(m.name.clone(), v);
                valid.insert(m.name.clone(), ok);
            }
            Kind::Categorical { classes } => {
                let ok: Vec<bool> = raw.iter().map(|&v| v != classes as f64).collect();
                values.insert(m.name.clone(), raw.clone());
                valid.insert(m.name.clone(), ok);
            }
        }
        let _ = tile_size;
    }
    Ok(NormalizedTile {
        id: tile.id,
        lon: tile.lon,
        lat: tile.lat,
        missing: tile.missing.clone(),
        values,
        valid,
        label: tile.label.clone(),
    })
}

/// Whether a modality supplies any reconstruction supervision on this tile:
/// present and at least one valid element.
pub fn modality_contributes(nt: &NormalizedTile, name: &str) -> bool {
    !nt.missing.contains(name) && nt.valid.get(name).is_some_and(|v| v.iter().any(|&b| b))
}
