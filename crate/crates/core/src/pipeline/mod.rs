//! End-to-end orchestration: TOML-backed configuration, content-addressed
//! stage caching, and the `run`/`predict` entry points that tie the
//! segmentation, cleaning, classification, and fusion stages together.

pub mod cache;
pub mod config;
pub mod run;

pub use cache::{
    hash_bytes, hash_file, hash_images, hash_json, hash_vessel_pairs, CacheKey, StageCache,
};
pub use config::{
    load_config, parse_config, DataConfig, PipelineConfig, PredictConfig, PreprocessConfig,
    CACHE_ROOT_ENV,
};
pub use run::{
    load_classifier_from, load_fusion_from, load_segnet_from, predict_one, run_pipeline,
    PredictionOutput,
};
