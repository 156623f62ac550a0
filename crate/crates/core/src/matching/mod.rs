//! Coarse-to-fine correspondence search.
//!
//! A query `p_s` (original pixels) is mapped to the deep level as `p_s / f`,
//! matched exhaustively there, projected back as `p_d' * f` and refined on the
//! shallow level inside a disk of radius `refine_radius` original pixels.

mod io;
mod search;
mod volume;

pub use io::{parse_matches, read_matches, write_matches, MatchRecord};
pub use search::{
    coarse_match, concat_match, dense_match, hierarchical_match, match_points, refine_match,
    DenseMatches, MatchMode,
};
pub use volume::{
    match_3d, read_voxel_grid, write_voxel_grid, Match3dConfig, Match3dResult,
    OccupancyDescriptor, SubvolumeDescriptor, VoxelGrid,
};

use crate::image::Point2;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    /// Refinement radius in original pixels.
    pub refine_radius: f64,
    pub dense_stride: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            refine_radius: 32.0,
            dense_stride: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchResult {
    /// Query point in the reference image, original pixels.
    pub query: Point2,
    /// Coarse match in cells of the coarse-stage map.
    pub coarse: Point2,
    /// Final match in the target image, original pixels.
    pub refined: Point2,
    pub d_coarse: f64,
    pub d_fine: f64,
    /// False when the query had to be clamped into the coarse grid.
    pub valid: bool,
}
