//! Dense matches to optical flow: consistency and motion-window filtering
//! followed by locally-weighted affine interpolation.

mod filter;
mod flo;
mod interp;

pub use filter::{forward_backward_filter, motion_window_filter};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use interp::interpolate_flow;

use crate::error::{Error, Result};
use crate::features::FeatureHierarchy;
use crate::matching::{dense_match, MatchConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Constant, fully valid field.
    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64, valid: bool) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = valid;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Forward-backward consistency threshold, pixels, inclusive.
    pub fb_threshold: f64,
    /// Per-axis displacement bound, pixels, inclusive.
    pub motion_window: f64,
    pub interp_k: usize,
    pub interp_sigma: f64,
    pub min_affine_neighbors: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            fb_threshold: 0.0,
            motion_window: 240.0,
            interp_k: 25,
            interp_sigma: 25.0,
            min_affine_neighbors: 3,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fb_threshold >= 0.0) || !(self.motion_window >= 0.0) {
            return Err(Error::InvalidConfig("flow thresholds must be >= 0".into()));
        }
        if self.interp_k == 0 || !(self.interp_sigma > 0.0) {
            return Err(Error::InvalidConfig("interp_k and interp_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Full flow pipeline between two aligned hierarchies of equally sized images.
pub fn estimate_flow(
    reference: &FeatureHierarchy,
    target: &FeatureHierarchy,
    width: usize,
    height: usize,
    match_cfg: &MatchConfig,
    cfg: &FlowConfig,
) -> Result<FlowField> {
    cfg.validate()?;
    let fwd = dense_match(reference, target, match_cfg)?;
    let bwd = dense_match(target, reference, match_cfg)?;
    let kept = forward_backward_filter(&fwd, &bwd, cfg.fb_threshold);
    let kept = motion_window_filter(&kept, cfg.motion_window);
    interpolate_flow(&kept, width, height, cfg)
}
