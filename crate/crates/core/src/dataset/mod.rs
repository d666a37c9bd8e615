//! Dataset preparation: statistics, neighbourhood-grouped splits, repeat
//! factor sampling, padding and tiling transforms, curriculum ordering.

mod curriculum;
mod sampling;
mod split;
mod stats;
mod transform;

pub use curriculum::{curriculum_order, curriculum_shards, CurriculumItem, DEFAULT_SHARDS};
pub use sampling::{repeat_factors, SamplingError, SamplingPlan, DEFAULT_RFS_THRESHOLD};
pub use split::{group_split, Split, SplitAssignment, SplitError, SplitTargets};
pub use stats::{dataset_stats, size_bucket, ClassStats, DatasetStats, SizeBucket, StatsConfig};
pub use transform::{
    circular_pad, classification_tiles, tile_labels, unpad, PadParams, Tile, TileParams, TransformError,
    PAD_DUPLICATE_KEY, PAD_LINK_KEY,
};
