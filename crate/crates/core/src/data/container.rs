//! Dataset persistence: JSON manifest plus fixed-stride per-tile blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::blobfile::{read_blob_file, write_blob_file};
use crate::data::schema::ModalitySchema;
use crate::data::stats::NormStats;
use crate::data::tile::{Dataset, Label, TaskKind, Tile};
use crate::error::{LabError, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Tile ids are stored as exact f64 integers inside the payload; this is
/// the largest id that survives the round trip.
pub const MAX_STORED_ID: u64 = 1 << 53;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    kind: String,
    seed: u64,
    tile_size: usize,
    task: TaskKind,
    tile_count: usize,
    /// f64 words per tile block: id, lon, lat, one present flag per
    /// modality, the label block, then every modality block in schema
    /// order (zero-filled when missing).
    tile_stride: usize,
    schema: Vec<ModalitySchema>,
    norm_stats: Option<NormStats>,
}

fn tile_stride(schema: &[ModalitySchema], tile_size: usize, task: &TaskKind) -> usize {
    3 + schema.len()
        + task.label_len(tile_size)
        + schema
            .iter()
            .map(|m| m.values_len(tile_size))
            .sum::<usize>()
}

pub fn save_dataset(ds: &Dataset, path: &Path, norm_stats: Option<&NormStats>) -> Result<()> {
    ds.validate()?;
    let stride = tile_stride(&ds.schema, ds.tile_size, &ds.task);
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        kind: "dataset".into(),
        seed: ds.seed,
        tile_size: ds.tile_size,
        task: ds.task,
        tile_count: ds.tiles.len(),
        tile_stride: stride,
        schema: ds.schema.clone(),
        norm_stats: norm_stats.cloned(),
    };
    let mut payload = Vec::with_capacity(stride * ds.tiles.len());
    for tile in &ds.tiles {
        if tile.id > MAX_STORED_ID {
            return Err(LabError::Dataset(format!(
                "tile id {} exceeds the storable range",
                tile.id
            )));
        }
        payload.push(tile.id as f64);
        payload.push(tile.lon);
        payload.push(tile.lat);
        for m in &ds.schema {
            payload.push(if tile.values.contains_key(&m.name) {
                1.0
            } else {
                0.0
            });
        }
        match (&ds.task, &tile.label) {
            (TaskKind::TileRegression, Label::Scalar(v)) => payload.push(*v),
            (TaskKind::PixelRegression, Label::Grid(g)) => payload.extend_from_slice(g),
            (TaskKind::MultiLabel { .. }, Label::MultiLabel(bits)) => {
                payload.extend(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }))
            }
            _ => unreachable!("validated above"),
        }
        for m in &ds.schema {
            match tile.values.get(&m.name) {
                Some(v) => payload.extend_from_slice(v),
                None => payload.extend(std::iter::repeat(0.0).take(m.values_len(ds.tile_size))),
            }
        }
    }
    write_blob_file(path, &header, &payload)
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, Option<NormStats>)> {
    let display = path.display().to_string();
    let (header, payload): (DatasetHeader, Vec<f64>) = read_blob_file(path)?;
    if header.kind != "dataset" {
        return Err(LabError::format(
            display,
            format!("expected a dataset file, found kind {:?}", header.kind),
        ));
    }
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(LabError::format(
            display,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    let stride = tile_stride(&header.schema, header.tile_size, &header.task);
    if stride != header.tile_stride {
        return Err(LabError::format(
            display,
            format!(
                "declared stride {} does not match schema stride {}",
                header.tile_stride, stride
            ),
        ));
    }
    if payload.len() != stride * header.tile_count {
        return Err(LabError::format(
            display,
            format!(
                "payload holds {} words, expected {}",
                payload.len(),
                stride * header.tile_count
            ),
        ));
    }
    let mut tiles = Vec::with_capacity(header.tile_count);
    for block in payload.chunks_exact(stride) {
        let mut at = 0usize;
        let mut take = |n: usize| {
            let s = &block[at..at + n];
            at += n;
            s
        };
        let idf = take(1)[0];
        if idf.fract() != 0.0 || idf < 0.0 || idf > MAX_STORED_ID as f64 {
            return Err(LabError::format(display.clone(), format!("bad tile id {}", idf)));
        }
        let id = idf as u64;
        let lon = take(1)[0];
        let lat = take(1)[0];
        let flags: Vec<f64> = take(header.schema.len()).to_vec();
        let label_block: Vec<f64> = take(header.task.label_len(header.tile_size)).to_vec();
        let label = match header.task {
            TaskKind::TileRegression => Label::Scalar(label_block[0]),
            TaskKind::PixelRegression => Label::Grid(label_block),
            TaskKind::MultiLabel { .. } => {
                let mut bits = Vec::with_capacity(label_block.len());
                for v in label_block {
                    match v {
                        x if x == 0.0 => bits.push(false),
                        x if x == 1.0 => bits.push(true),
                        x => {
                            return Err(LabError::format(
                                display.clone(),
                                format!("tag flag {} is not 0 or 1", x),
                            ))
                        }
                    }
                }
                Label::MultiLabel(bits)
            }
        };
        let mut values = BTreeMap::new();
        let mut missing = BTreeSet::new();
        for (i, m) in header.schema.iter().enumerate() {
            let vals = take(m.values_len(header.tile_size));
            match flags[i] {
                x if x == 1.0 => {
                    values.insert(m.name.clone(), vals.to_vec());
                }
                x if x == 0.0 => {
                    missing.insert(m.name.clone());
                }
                x => {
                    return Err(LabError::format(
                        display.clone(),
                        format!("present flag {} is not 0 or 1", x),
                    ))
                }
            }
        }
        tiles.push(Tile {
            id,
            lon,
            lat,
            missing,
            values,
            label,
        });
    }
    let ds = Dataset {
        schema: header.schema,
        tile_size: header.tile_size,
        task: header.task,
        seed: header.seed,
        tiles,
    };
    ds.validate()?;
    Ok((ds, header.norm_stats))
}
