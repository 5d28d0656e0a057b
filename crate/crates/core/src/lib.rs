//! Core library for the fundus DR pipeline: dataset IO, preprocessing,
//! vessel segmentation, Algorithm-1 image cleaning, ordinal grade
//! classifiers, decision fusion, metrics, and pipeline orchestration.

pub mod dataio;
pub mod error;
pub mod fusion;
pub mod imgio;
pub mod metrics;
pub mod cleaner;
pub mod classifier;
pub mod pipeline;
pub mod preprocess;
pub mod segnet;
pub mod synth;
pub mod types;
pub(crate) mod util;

pub use dataio::{DatasetSplit, RunManifest, SplitStrategy};
pub use error::{CoreResult, PipelineError};
pub use metrics::MetricsReport;
pub use types::{FundusImage, OrdinalPrediction, SourceDataset, VesselMask};
