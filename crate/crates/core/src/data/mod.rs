//! Dataset ingestion and generation: OFF meshes, surface sampling, the
//! synthetic shape benchmark, augmentation and the binary cloud pack.

mod augment;
mod dataset;
mod off;
mod pack;
mod sample;
mod synthetic;

pub use augment::{augment, AugmentConfig};
pub use dataset::{stream_rng, Dataset, Split};
pub use off::{load_off, parse_off, Mesh};
pub use pack::{pack_read, pack_write, read_pack_bytes, write_pack_bytes, PACK_MAGIC, PACK_VERSION};
pub use sample::{sample_mesh_surface, triangle_area};
pub use synthetic::{generate_synthetic, synthetic_dataset, ShapeKind, SyntheticConfig};
