//! Etch-pit counting for nuclear track detector images.
//!
//! Frames are enhanced by deconvolving with a Gaussian and convolving with a
//! disk the size of the largest pit ([`pipeline::enhance`]). A small network
//! predicts the detection threshold from the mean of the enhanced image
//! ([`neural`]), and connected components above it are counted
//! ([`pipeline::count_peaks`]).
//!
//! [`synth`] generates frames with ground truth, [`datastore`] keeps corpus
//! manifests and threshold annotations, and [`eval`] measures accuracy.

pub mod datastore;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod neural;
pub mod overlay;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use datastore::{AnnotationRecord, AnnotationStore, DatasetManifest, FrameEntry, Split};
pub use error::{Error, Result};
pub use neural::{MlpModel, ModelRegistry, TrainConfig, TrainingRecord};
pub use overlay::{render_overlay, OverlayStyle};
pub use pipeline::{BinaryMap, PeakReport, PipelineConfig, ResponseMap};
pub use raster::{load_image, save_image, GrayImage};
pub use synth::{Category, GroundTruth, SceneSpec, Track};
