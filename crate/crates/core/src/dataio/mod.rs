//! Dataset IO: loaders for vessel and grading datasets, deterministic
//! splitting, and run-manifest persistence.

pub mod loaders;
pub mod manifest;
pub mod split;

pub use loaders::{
    find_image_file, list_rasters, load_aptos, load_vessel_dataset, load_vessel_dataset_with,
    vessel_layout, VesselLayout, DEFAULT_STARE_ANNOTATOR, RASTER_EXTS,
};
pub use manifest::{load_manifest, save_manifest, RunManifest, MANIFEST_SCHEMA_VERSION};
pub use split::{derive_seed, make_split, make_split_ids, DatasetSplit, SplitStrategy, NUM_GRADES};
