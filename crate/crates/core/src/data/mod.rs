//! Synthetic multimodal tile data: schema, generation, normalization,
//! and persistence.

pub mod blobfile;
pub mod container;
pub mod encoding;
pub mod generate;
pub mod geojson;
pub mod schema;
pub mod stats;
pub mod tile;

pub use container::{load_dataset, save_dataset};
pub use encoding::{geolocation_encoding, month_encoding};
pub use generate::{generate_world, WorldConfig};
pub use geojson::parse_geojson_points;
pub use schema::{default_schema, Kind, ModalitySchema, Scale};
pub use stats::{
    compute_norm_stats, modality_contributes, normalize_tile, BandStats, NormStats,
    NormalizedTile,
};
pub use tile::{Dataset, Label, TaskKind, Tile, PIXEL_LABEL_NO_DATA};
