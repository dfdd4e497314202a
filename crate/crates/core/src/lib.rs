//! Class-ratio estimation and adaptive class thresholding for cross-domain
//! self-training of object detectors.
//!
//! The crate covers the full pipeline:
//!
//! * [`similarity`]: per-image prompt similarity from image/text embeddings.
//! * [`regression`]: absolute and relative linear ratio predictors, their
//!   merge and the squared shift correction.
//! * [`act`]: per-class thresholds that match a target class ratio, and the
//!   dynamic choice of the expected number of objects per image.
//! * [`sim`]: a small deterministic mean-teacher self-training loop that
//!   consumes the thresholds.
//! * [`evaluation`]: ratio KL reports, pseudo-label F1 and scenario sweeps.

pub mod act;
pub mod detection;
pub mod distribution;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod regression;
pub mod rng;
pub mod sim;
pub mod similarity;
pub mod synth;

pub mod cli;

pub use act::{
    act, dynamic_objects_per_image, dynamic_selection, select_thresholds, ActConfig, DynamicSelection,
    PseudoLabelSet, ThresholdSet, SENTINEL_NONE,
};
pub use detection::{BBox, DetectionRecord};
pub use distribution::{kl_divergence, ClassCounts, ClassRatio, KlDirection};
pub use error::{Error, Result};
pub use regression::{
    merge_predictions, square_prediction, LabelledExample, ModelKind, PredictConfig, RatioPrediction,
    RatioPredictor, RegressionModel,
};
pub use sim::{run_self_training, SimConfig};
pub use similarity::{EmbeddingMatrix, ProjectionMatrix, SimilarityVector};
