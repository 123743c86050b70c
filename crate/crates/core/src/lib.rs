//! Gated information fusion (GIF) for two-modality detection.
//!
//! The crate bundles everything needed to train and probe a small fusion
//! detector from scratch:
//!
//! - [`tensor`]: dense `f64` tensors, a define-by-run reverse-mode tape and SGD.
//! - [`gif`]: the gated fusion block and its fixed-weight baseline.
//! - [`lidar`]: point cloud to depth/height/intensity image projection.
//! - [`degradation`]: blank, occlusion, illumination and noise corruptions.
//! - [`synth`]: a deterministic paired-modality scene generator.
//! - [`detector`]: two-stream cell classifier, training and evaluation.
//! - [`experiment`]: desk-scale datasets and per-condition reports.

pub mod checkpoint;
pub mod degradation;
pub mod detector;
pub mod experiment;
pub mod gif;
pub mod gradcheck;
pub mod image;
pub mod lidar;
pub mod pnm;
pub mod rng;
pub mod synth;
pub mod tensor;
