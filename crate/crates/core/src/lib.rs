//! Non-neural machinery for learning and benchmarking local feature
//! descriptors from registered webcam views.
//!
//! The crate is organised along the data path:
//!
//! * [`curation`] picks cameras and images and clusters them into views.
//! * [`detector`] finds keypoints (scale-normalised Hessian maxima, or random
//!   draws from a probability map).
//! * [`patches`] cuts corresponding patch sets out of a registered view and
//!   implements the training-time augmentation recipes.
//! * [`descriptor`] holds the patch normaliser and a handcrafted baseline
//!   descriptor behind a pluggable trait.
//! * [`metric`] computes the hard-in-batch triplet losses and hardness scores.
//! * [`datasetops`] reduces datasets by hardness and composes training batches.
//! * [`compress`] fits and applies PCA to embeddings.
//! * [`eval`] implements FPR95, AP/mAP and mAA.
//!
//! Shared domain types live in [`types`], file formats in [`io`] and the
//! seeded random source in [`rng`].

pub mod compress;
pub mod curation;
pub mod datasetops;
pub mod descriptor;
pub mod detector;
mod error;
pub mod eval;
pub mod io;
pub mod metric;
pub mod patches;
pub mod resample;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use rng::Rng;
pub use types::{EmbeddingMatrix, Image, Keypoint, Patch, PatchSet};
