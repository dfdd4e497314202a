//! Desk-scale Mean Teacher self-training on synthetic feature-vector scenes.
//!
//! The detector is a per-region linear softmax classifier. Boxes are carried
//! through unchanged, so only classification losses exist. Scenes may hold
//! clutter regions that the detector scores but the annotations omit. Weak and strong
//! augmentation are Gaussian feature noise, with feature dropout on the
//! strong view.

mod detector;
mod loss;
mod scene;
mod trainer;

pub use detector::{
    detect, detect_with_probs, ema_update, log_softmax, perturb, softmax, ToyDetectorWeights,
};
pub use loss::{classification_losses, hard_cross_entropy, soft_cross_entropy, total_loss, LossReport};
pub use scene::{ClutterRegion, Domain, SceneObject, SyntheticScene};
pub use trainer::{run_self_training, SimConfig, Trace, TraceRow};

pub use crate::detection::{nms, nms_indices};
