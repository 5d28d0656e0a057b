//! Severity grading: EfficientNet-style backbones with cumulative ordinal
//! heads, training, and the dual-pathway (original vs. vessel-removed)
//! prediction path.

mod backbone;
mod model;
mod ordinal;
mod predict;
mod train;

pub use backbone::{backbone, Backbone, Normalization, ScaledEfficientNet, TinyBackbone};
pub use model::{build_classifier, Classifier, ClassifierSpec, MIN_INPUT_EDGE};
pub use ordinal::{
    decode_ordinal, encode_ordinal, prediction_from_grade, prediction_from_scores,
    DECODE_THRESHOLD, NUM_GRADES,
};
pub use predict::{predict_pair, preprocess_for_classifier, PairPredictOptions};
pub use train::{train_classifier, ClfEpochRecord, ClfTrainConfig, ClfTrainingLog};
