//! Unpaired synthetic-to-real image translation with a mutual-information
//! structure constraint, plus supervised monocular depth estimation on the
//! translated output.
//!
//! The library is organized as a pipeline:
//!
//! 1. [`dataio`] loads manifests, images and depth maps, undistorts fisheye
//!    frames, splits sequences and can synthesize a toy dataset.
//! 2. [`translation`] trains a pair of cycle-consistent generators whose
//!    A-to-B direction is additionally constrained to keep image intensity
//!    mutually informative with the ground-truth depth ([`miloss`]).
//! 3. [`depthnet`] trains an encoder-decoder depth regressor on translated
//!    images paired with the original depth maps.
//! 4. [`eval`] scores depth predictions (median-rescaled RMSE, AbsRel,
//!    threshold accuracies) and distribution distances (FID, KID) over
//!    feature embeddings.
//!
//! All randomness is seeded explicitly; training, translation and evaluation
//! are bit-reproducible on CPU for a fixed configuration.

pub mod dataio;
pub mod depthnet;
mod error;
pub mod eval;
pub mod miloss;
pub mod nn;
pub mod translation;
pub mod types;

pub use error::{Error, Result};
