//! Volumes, slices, phantoms and on-disk formats.

pub mod checkpoint;
pub mod export;
pub mod manifest;
pub mod phantom;
pub mod slices;
pub mod volume;

pub use manifest::{load_dataset, DatasetManifest};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use phantom::{make_phantom, PhantomKind, PhantomSpec};
pub use slices::{extract_slices, split_dataset, SliceDataset, SliceEntry, Split};
pub use volume::{decode_volume, encode_volume, load_volume, save_volume, Volume};
