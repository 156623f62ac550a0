//! Hierarchical metric learning and coarse-to-fine matching for dense 2D and
//! 3D correspondences.
//!
//! The crate is organised bottom-up:
//! - [`image`] and [`feature_map`]: containers, resampling and interpolation.
//! - [`features`]: per-level base descriptors and trainable embedding heads.
//! - [`learn`]: multi-level correspondence contrastive loss, analytic
//!   gradients, on-the-fly hard-negative mining and an ADAM training loop.
//! - [`matching`]: deep-coarse / shallow-fine matching in 2D, a concatenated
//!   descriptor baseline and the 3D subvolume search.
//! - [`flow`]: consistency filtering, sparse-to-dense interpolation, `.flo` I/O.
//! - [`eval`]: PCK, endpoint error, Fl outlier rates and synthetic warped pairs.
//! - [`cli`]: configuration parsing and the command implementations.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod feature_map;
pub mod features;
pub mod flow;
pub mod image;
pub mod learn;
pub mod matching;

pub use error::{Error, Result};
pub use feature_map::{l2_normalize, FeatureMap};
pub use features::{EmbeddingHead, FeatureHierarchy, LevelConfig};
pub use image::{Image, Point2};
