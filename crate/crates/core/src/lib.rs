//! Skeleton-sequence action classification toolkit.
//!
//! The pipeline turns raw 3D skeleton recordings into class predictions:
//! body-centered view normalization, a stacked LSTM trained with a
//! per-timestep loss, latent hidden-state features fed to a linear SVM,
//! max-min pooled region descriptors with data-driven region selection,
//! and late fusion of the per-classifier score streams. A deterministic
//! synthetic generator and benchmark harness exercise the whole chain.

pub mod error;
pub mod fusion;
pub mod latent;
pub mod linalg;
pub mod lstm;
pub mod normalize;
pub mod region;
pub mod skeleton;
pub mod svm;
pub mod synth;

pub mod benchrun;
pub mod config;

pub use error::{Error, Result};
pub use fusion::{FusionConfig, ScoreNorm};
pub use latent::{FeatureLayout, LatentFeatureMatrix};
pub use lstm::{LossMode, LstmParams, LstmTape, TrainConfig};
pub use normalize::{BodyTransform, NormalizeMode, NormalizedSequence};
pub use skeleton::{DatasetSplit, JointRoleMap, SkeletonSequence};
pub use svm::{ClassScores, SvmModel};
pub use synth::{EvidenceWindow, SynthSpec};
