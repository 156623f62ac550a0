//! Scoring (PCK, EPE, Fl) and synthetic ground truth.

mod metrics;
mod synth;

pub use metrics::{epe, fl_outlier_rate, is_fl_outlier, pck, read_mask, PckCurve};
pub use synth::{dead_leaves_image, sample_transform, synth_pair, textured_image, Similarity, SynthPair, SynthSpec, TransformKind};
