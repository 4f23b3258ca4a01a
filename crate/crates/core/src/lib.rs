//! Reconstruction-based unsupervised anomaly detection for 3D sinus volumes.
//!
//! A convolutional autoencoder (or its variational sibling) is fitted to
//! healthy volumes only. Volumes it reconstructs poorly are flagged, using
//! L1/L2 reconstruction thresholds picked on a precision-recall curve, and the
//! median-filtered residual is rendered as a heat map.

pub mod error;
pub mod eval;
pub mod heatmap;
pub mod io;
pub mod models;
pub mod phantom;
pub mod preprocess;
pub mod stages;
pub mod tensor;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use eval::{ScoreRecord, ThresholdMode, Thresholds};
pub use io::config::RunConfig;
pub use models::{ArchConfig, Autoencoder, CaeParams, Model, ModelKind, VaeParams};
pub use phantom::{PhantomConfig, Split};
pub use preprocess::{CropSize, CropSpec, Pipeline, RigidTransform};
pub use tensor::{Element, Tape, Tensor, Var};
pub use training::TrainConfig;
pub use volume::{AnomalyType, Label, Side, Volume, VolumeMeta};
