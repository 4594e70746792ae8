//! Region handling, split protocol, and test-batch partitions.

pub mod partition;
pub mod polygon;
pub mod protocol;

pub use partition::{geographic_partition, random_partition, BBox, GeoBatch};
pub use polygon::{point_in_polygon, Polygon};
pub use protocol::{
    load_splits, make_splits, save_splits, SplitRatios, SplitSet, Subset,
};
