//! Checkpoint persistence: manifest plus the three parameter stores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::blobfile::{read_blob_file, write_blob_file};
use crate::data::schema::ModalitySchema;
use crate::data::tile::TaskKind;
use crate::error::{LabError, Result};
use crate::model::{init_model, Model, ModelConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A trained model plus the training provenance needed to reuse it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train_seed: u64,
    pub epoch: usize,
    pub validation_metric: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    kind: String,
    config: ModelConfig,
    schema: Vec<ModalitySchema>,
    tile_size: usize,
    task: TaskKind,
    train_seed: u64,
    epoch: usize,
    validation_metric: f64,
    encoder_len: usize,
    task_decoder_len: usize,
    modality_decoder_len: usize,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let m = &ckpt.model;
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "checkpoint".into(),
        config: m.config.clone(),
        schema: m.schema.clone(),
        tile_size: m.tile_size,
        task: m.task,
        train_seed: ckpt.train_seed,
        epoch: ckpt.epoch,
        validation_metric: ckpt.validation_metric,
        encoder_len: m.encoder.len(),
        task_decoder_len: m.task_decoder.len(),
        modality_decoder_len: m.modality_decoder.len(),
    };
    let mut payload =
        Vec::with_capacity(m.encoder.len() + m.task_decoder.len() + m.modality_decoder.len());
    payload.extend_from_slice(m.encoder.data());
    payload.extend_from_slice(m.task_decoder.data());
    payload.extend_from_slice(m.modality_decoder.data());
    write_blob_file(path, &header, &payload)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let display = path.display().to_string();
    let (header, payload): (CheckpointHeader, Vec<f64>) = read_blob_file(path)?;
    if header.kind != "checkpoint" {
        return Err(LabError::format(
            display,
            format!("expected a checkpoint file, found kind {:?}", header.kind),
        ));
    }
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(LabError::format(
            display,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    // Rebuild the stores through the same builder that initialized them,
    // then overwrite the values; layouts cannot drift apart this way.
    let mut model = init_model(
        header.config,
        header.schema,
        header.tile_size,
        header.task,
        0,
    )?;
    let want = model.encoder.len() + model.task_decoder.len() + model.modality_decoder.len();
    if payload.len() != want
        || header.encoder_len != model.encoder.len()
        || header.task_decoder_len != model.task_decoder.len()
        || header.modality_decoder_len != model.modality_decoder.len()
    {
        return Err(LabError::format(
            display,
            format!("parameter payload holds {} values, expected {}", payload.len(), want),
        ));
    }
    let (enc, rest) = payload.split_at(model.encoder.len());
    let (task, alpha) = rest.split_at(model.task_decoder.len());
    model.encoder.set_data(enc)?;
    model.task_decoder.set_data(task)?;
    model.modality_decoder.set_data(alpha)?;
    Ok(Checkpoint {
        model,
        train_seed: header.train_seed,
        epoch: header.epoch,
        validation_metric: header.validation_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::default_schema;

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let model = init_model(
            ModelConfig {
                embed_dim: 6,
                patch_size: 2,
                ..ModelConfig::default()
            },
            default_schema(),
            4,
            TaskKind::TileRegression,
            5,
        )
        .unwrap();
        let ckpt = Checkpoint {
            model,
            train_seed: 42,
            epoch: 7,
            validation_metric: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.encoder.checksum(), ckpt.model.encoder.checksum());
        assert_eq!(
            back.model.modality_decoder.checksum(),
            ckpt.model.modality_decoder.checksum()
        );
        assert_eq!(back.epoch, 7);
        assert_eq!(back.train_seed, 42);
        assert_eq!(back.model.config, ckpt.model.config);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds_path = dir.path().join("w.bin");
        let cfg = crate::data::generate::WorldConfig {
            tiles: 4,
            tile_size: 4,
            ..Default::default()
        };
        let ds = crate::data::generate::generate_world(&cfg, 0).unwrap();
        crate::data::container::save_dataset(&ds, &ds_path, None).unwrap();
        assert!(load_checkpoint(&ds_path).is_err());
    }
}
