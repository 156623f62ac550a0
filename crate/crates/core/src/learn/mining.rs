//! On-the-fly hardest-negative search on a single feature level.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::image::Point2;
use crate::learn::correspondence::Triplet;

/// A reference location, its current descriptor on the level being mined,
/// and its ground-truth match in the target image.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub x: Point2,
    pub descriptor: Vec<f64>,
    pub x_prime: Point2,
}

/// Exclusion radius in original pixels for a window `c` on a level with scale `f`:
/// `ceil(c / f) * f`.
pub fn exclusion_radius(window: f64, scale_factor: usize) -> f64 {
    let f = scale_factor as f64;
    (window / f).ceil() * f
}

/// For every anchor, the target cell with the smallest descriptor distance
/// among cells farther than the exclusion radius from the anchor's true match.
/// Ties go to the lowest row-major cell index.
pub fn mine_hard_negatives(anchors: &[Anchor], target: &FeatureMap, window: f64) -> Result<Vec<Triplet>> {
    let radius = exclusion_radius(window, target.scale_factor);
    anchors
        .par_iter()
        .map(|a| {
            if a.descriptor.len() != target.dim {
                return Err(Error::DimMismatch {
                    expected: target.dim,
                    found: a.descriptor.len(),
                });
            }
            let cell = hardest_cell(&a.descriptor, target, a.x_prime, radius)
                .ok_or(Error::NoValidNegative)?;
            Ok(Triplet::negative(a.x, target.cell_origin(cell)))
        })
        .collect()
}

fn hardest_cell(query: &[f64], target: &FeatureMap, gt: Point2, radius: f64) -> Option<usize> {
    let f = target.scale_factor as f64;
    let r2 = radius * radius;
    let mut best: Option<(usize, f64)> = None;
    for cy in 0..target.height {
        let dy = cy as f64 * f - gt.y;
        for cx in 0..target.width {
            let dx = cx as f64 * f - gt.x;
            if dx * dx + dy * dy <= r2 {
                continue;
            }
            let cell = cy * target.width + cx;
            let bound = best.map_or(f64::INFINITY, |(_, d)| d);
            if let Some(d) = bounded_sq_distance(query, target.descriptor(cell), bound) {
                if d < bound {
                    best = Some((cell, d));
                }
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Squared distance, or `None` once the partial sum exceeds `bound`.
pub(crate) fn bounded_sq_distance(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0;
    for (chunk_a, chunk_b) in a.chunks(8).zip(b.chunks(8)) {
        for (x, y) in chunk_a.iter().zip(chunk_b) {
            acc += (x - y) * (x - y);
        }
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(descs: &[[f64; 2]], w: usize, f: usize) -> FeatureMap {
        let data = descs.iter().flatten().copied().collect();
        FeatureMap::new(0, f, w, descs.len() / w, 2, data, true).unwrap()
    }

    #[test]
    fn planted_copy_outside_window() {
        let mut descs = vec![[0.0, 1.0]; 64];
        descs[7 * 8 + 6] = [1.0, 0.0];
        let target = map_from(&descs, 8, 1);
        let anchor = Anchor {
            x: Point2::new(1.0, 1.0),
            descriptor: vec![1.0, 0.0],
            x_prime: Point2::new(0.0, 0.0),
        };
        let neg = mine_hard_negatives(&[anchor], &target, 2.0).unwrap();
        assert_eq!(neg[0].x_prime, Point2::new(6.0, 7.0));
        assert!(!neg[0].positive);
    }

    #[test]
    fn copy_inside_window_is_skipped() {
        let mut descs = vec![[0.0, 1.0]; 16];
        descs[1] = [1.0, 0.0];
        let target = map_from(&descs, 4, 1);
        let anchor = Anchor {
            x: Point2::new(0.0, 0.0),
            descriptor: vec![1.0, 0.0],
            x_prime: Point2::new(0.0, 0.0),
        };
        let neg = mine_hard_negatives(&[anchor], &target, 1.5).unwrap();
        // Radius ceil(1.5) = 2 excludes (0,0),(1,0),(2,0),(0,1),(1,1),(0,2); ties -> (3,0).
        assert_eq!(neg[0].x_prime, Point2::new(3.0, 0.0));
    }

    #[test]
    fn whole_map_excluded() {
        let target = map_from(&[[1.0, 0.0]; 16], 4, 2);
        let anchor = Anchor {
            x: Point2::new(0.0, 0.0),
            descriptor: vec![1.0, 0.0],
            x_prime: Point2::new(3.0, 3.0),
        };
        // Diagonal of the map in original pixels is 6 * sqrt(2) < 10.
        assert!(matches!(
            mine_hard_negatives(&[anchor], &target, 10.0),
            Err(Error::NoValidNegative)
        ));
    }

    #[test]
    fn radius_rounds_up_to_cells() {
        assert_eq!(exclusion_radius(8.0, 1), 8.0);
        assert_eq!(exclusion_radius(8.0, 4), 8.0);
        assert_eq!(exclusion_radius(8.0, 3), 9.0);
        assert_eq!(exclusion_radius(1.0, 4), 4.0);
    }
}
