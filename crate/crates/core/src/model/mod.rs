//! The model: a patch encoder shared by a main-task decoder and a
//! multimodal reconstruction decoder.

pub mod checkpoint;
pub mod forward;
pub mod params;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::schema::{Kind, ModalitySchema, Scale};
use crate::data::stats::NormalizedTile;
use crate::data::tile::TaskKind;
use crate::error::{LabError, Result};
use crate::tensor::{Tape, Tensor};
use crate::util::derive_seed;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{bind_store, build_tile_graph, extract_grad, patchify, BoundStore, TileGraph};
pub use params::{ParamStore, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub patch_size: usize,
    pub ln_eps: f64,
    /// Encoder inputs; every other modality is reconstruction-only.
    pub input_modalities: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            patch_size: 4,
            ln_eps: 1e-5,
            input_modalities: vec!["s2".into()],
        }
    }
}

/// Encoder, task decoder, and modality decoder parameters plus the shapes
/// they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: Vec<ModalitySchema>,
    pub tile_size: usize,
    pub task: TaskKind,
    /// Encoder parameters; the only thing test-time adaptation touches.
    pub encoder: ParamStore,
    pub task_decoder: ParamStore,
    pub modality_decoder: ParamStore,
}

impl Model {
    /// Patches per tile edge.
    pub fn grid_size(&self) -> usize {
        self.tile_size / self.config.patch_size
    }

    /// Total encoder input channels.
    pub fn input_channels(&self) -> usize {
        self.config
            .input_modalities
            .iter()
            .map(|name| {
                self.schema
                    .iter()
                    .find(|m| &m.name == name)
                    .map(|m| m.stored_bands())
                    .unwrap_or(0)
            })
            .sum()
    }

    /// Flat length of one tile's task prediction.
    pub fn task_output_len(&self) -> usize {
        match self.task {
            TaskKind::TileRegression => 1,
            TaskKind::PixelRegression => 1,
            TaskKind::MultiLabel { classes } => classes,
        }
    }

    /// Patch-embedding grid for one tile, shaped embed_dim x grid x grid.
    pub fn encode(&self, nt: &NormalizedTile) -> Result<Tensor> {
        let mut tape = Tape::new();
        let theta = bind_store(&mut tape, &self.encoder)?;
        let emb = forward::build_encoder(&mut tape, self, &theta, nt)?;
        let et = tape.transpose(emb)?; // (D, P) row-major equals (D, g, g)
        let g = self.grid_size();
        Tensor::new(
            vec![self.config.embed_dim, g, g],
            tape.value(et).data().to_vec(),
        )
    }

    fn embedding_leaf(&self, tape: &mut Tape, emb: &Tensor) -> Result<crate::tensor::ValueId> {
        let g = self.grid_size();
        let d = self.config.embed_dim;
        if emb.shape() != [d, g, g] {
            return Err(LabError::Shape(format!(
                "embedding shape {:?}, expected [{}, {}, {}]",
                emb.shape(),
                d,
                g,
                g
            )));
        }
        // Stored (D, P); the graph wants patch-major (P, D).
        let p = g * g;
        let src = emb.data();
        let mut data = vec![0.0; p * d];
        for di in 0..d {
            for pi in 0..p {
                data[pi * d + di] = src[di * p + pi];
            }
        }
        tape.leaf(Tensor::new(vec![p, d], data)?)
    }

    /// Main-task prediction from an embedding grid: [1] for tile
    /// regression, tile_size x tile_size for dense regression, [classes]
    /// logits for tags.
    pub fn decode_task(&self, emb: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let g = bind_store(&mut tape, &self.task_decoder)?;
        let e = self.embedding_leaf(&mut tape, emb)?;
        let pred = forward::build_task_head(&mut tape, self, &g, e)?;
        let flat = tape.value(pred).data().to_vec();
        match self.task {
            TaskKind::TileRegression => Tensor::new(vec![1], flat),
            TaskKind::PixelRegression => Tensor::new(vec![self.tile_size, self.tile_size], flat),
            TaskKind::MultiLabel { classes } => Tensor::new(vec![classes], flat),
        }
    }

    /// Prediction straight from a tile.
    pub fn predict(&self, nt: &NormalizedTile) -> Result<Tensor> {
        self.decode_task(&self.encode(nt)?)
    }

    /// Reconstructions of every schema modality from an embedding grid:
    /// pixel-scale outputs are channels x tile_size x tile_size, tile-scale
    /// outputs are [channels]. Categorical channels are class logits.
    pub fn decode_modalities(&self, emb: &Tensor) -> Result<Vec<(String, Tensor)>> {
        let mut tape = Tape::new();
        let alpha = bind_store(&mut tape, &self.modality_decoder)?;
        let e = self.embedding_leaf(&mut tape, emb)?;
        let upsampled = forward::build_upsampled(&mut tape, self, e)?;
        let pooled = tape.mean_axis1(upsampled)?;
        let mut out = Vec::with_capacity(self.schema.len());
        for m in &self.schema {
            let r = forward::build_recon_head(&mut tape, m, &alpha, upsampled, pooled)?;
            let data = tape.value(r).data().to_vec();
            let t = match m.scale {
                Scale::Pixel => Tensor::new(
                    vec![m.recon_channels(), self.tile_size, self.tile_size],
                    data,
                )?,
                Scale::Tile => Tensor::new(vec![m.recon_channels()], data)?,
            };
            out.push((m.name.clone(), t));
        }
        Ok(out)
    }

    /// Main-task loss of a prediction (shaped as [`Model::decode_task`]
    /// emits) against a tile's label.
    pub fn task_loss(&self, pred: &Tensor, nt: &NormalizedTile) -> Result<f64> {
        let mut tape = Tape::new();
        let flat = Tensor::matrix(1, pred.len(), pred.data().to_vec())?;
        let p = tape.leaf(flat)?;
        let loss = forward::build_task_loss(&mut tape, &self.task, nt.id, p, &nt.label)?;
        tape.value(loss).item()
    }

    /// Reconstruction loss of one modality's reconstruction (shaped as
    /// [`Model::decode_modalities`] emits) on a tile. None when the
    /// modality is absent there.
    pub fn modality_loss(
        &self,
        name: &str,
        recon: &Tensor,
        nt: &NormalizedTile,
    ) -> Result<Option<f64>> {
        let m = self
            .schema
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| LabError::Schema(format!("unknown modality {}", name)))?;
        let cols = match m.scale {
            Scale::Pixel => self.tile_size * self.tile_size,
            Scale::Tile => 1,
        };
        let mut tape = Tape::new();
        let r = tape.leaf(Tensor::matrix(m.recon_channels(), cols, recon.data().to_vec())?)?;
        match forward::build_modality_loss(&mut tape, m, r, nt)? {
            Some(id) => Ok(Some(tape.value(id).item()?)),
            None => Ok(None),
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Build the three parameter stores with deterministic seeded values.
fn build_stores(
    config: &ModelConfig,
    schema: &[ModalitySchema],
    task: &TaskKind,
    seed: u64,
) -> Result<(ParamStore, ParamStore, ParamStore)> {
    let d = config.embed_dim;
    let p = config.patch_size;
    let in_ch: usize = config
        .input_modalities
        .iter()
        .map(|name| {
            schema
                .iter()
                .find(|m| &m.name == name)
                .map(|m| m.stored_bands())
                .unwrap_or(0)
        })
        .sum();
    let patch_in = in_ch * p * p;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));

    let encoder = ParamStore::builder()
        .add("patch_w", vec![patch_in, d], glorot(&mut rng, patch_in, d, patch_in * d))?
        .add("patch_b", vec![d], vec![0.0; d])?
        .add("hidden_w", vec![d, d], glorot(&mut rng, d, d, d * d))?
        .add("hidden_b", vec![d], vec![0.0; d])?
        .build();

    let task_decoder = match task {
        TaskKind::TileRegression | TaskKind::MultiLabel { .. } => {
            let out = match task {
                TaskKind::MultiLabel { classes } => *classes,
                _ => 1,
            };
            ParamStore::builder()
                .add("ln_gamma", vec![d], vec![1.0; d])?
                .add("ln_beta", vec![d], vec![0.0; d])?
                .add("head_w", vec![d, out], glorot(&mut rng, d, out, d * out))?
                .add("head_b", vec![out], vec![0.0; out])?
                .build()
        }
        TaskKind::PixelRegression => ParamStore::builder()
            .add("head_w", vec![1, d], glorot(&mut rng, d, 1, d))?
            .add("head_b", vec![1], vec![0.0])?
            .build(),
    };

    let mut alpha = ParamStore::builder();
    for m in schema {
        let c = m.recon_channels();
        alpha = alpha
            .add(&format!("w_{}", m.name), vec![c, d], glorot(&mut rng, d, c, c * d))?
            .add(&format!("b_{}", m.name), vec![c], vec![0.0; c])?;
    }
    Ok((encoder, task_decoder, alpha.build()))
}

/// Validate a configuration against a schema and build a fresh model.
pub fn init_model(
    config: ModelConfig,
    schema: Vec<ModalitySchema>,
    tile_size: usize,
    task: TaskKind,
    seed: u64,
) -> Result<Model> {
    if config.embed_dim == 0 {
        return Err(LabError::Config("embed_dim is zero".into()));
    }
    if config.patch_size == 0 || tile_size % config.patch_size != 0 {
        return Err(LabError::Config(format!(
            "patch size {} must divide tile size {}",
            config.patch_size, tile_size
        )));
    }
    if !(config.ln_eps.is_finite() && config.ln_eps > 0.0) {
        return Err(LabError::Config("ln_eps must be positive".into()));
    }
    if config.input_modalities.is_empty() {
        return Err(LabError::Config("no input modalities".into()));
    }
    for name in &config.input_modalities {
        let m = schema
            .iter()
            .find(|m| &m.name == name)
            .ok_or_else(|| LabError::Config(format!("unknown input modality {}", name)))?;
        if m.scale != Scale::Pixel || !matches!(m.kind, Kind::Continuous { .. }) {
            return Err(LabError::Config(format!(
                "input modality {} must be continuous pixel data",
                name
            )));
        }
    }
    task.validate()?;
    let (encoder, task_decoder, modality_decoder) =
        build_stores(&config, &schema, &task, seed)?;
    Ok(Model {
        config,
        schema,
        tile_size,
        task,
        encoder,
        task_decoder,
        modality_decoder,
    })
}
