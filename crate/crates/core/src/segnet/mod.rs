//! Vessel segmentation: a nested-skip ("UNet++"-family) encoder-decoder
//! with optional down-fusion edges, trained with Tversky loss and evaluated
//! with K-fold cross-validation.

mod model;
mod predict;
mod train;
mod wiring;

pub use model::{SegNet, SegNetworkSpec};
pub use predict::{predict_mask, predict_probabilities};
pub use train::{kfold_evaluate, train_segnet, EpochRecord, SegTrainConfig, TrainingLog};
pub use wiring::{build_wiring, node_count, node_name, validate_wiring, NodeWiring};
