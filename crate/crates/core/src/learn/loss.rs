//! Multi-level correspondence contrastive loss and its analytic gradient.
//!
//! A descriptor at an original-image point `x` on level `l` is
//! `normalize(sum_k w_k * normalize(W^T B_k + b))`, where `B_k` are the base
//! descriptors at the bilinear corners of `x / f` and `w_k` their weights.
//! Integer points have a single corner and skip the outer normalization,
//! matching [`FeatureMap::sample_unit`].

use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::feature_map::{squared_distance, FeatureMap, DEFAULT_NORM_EPS};
use crate::features::{EmbeddingHead, FeatureHierarchy};
use crate::image::Point2;
use crate::learn::correspondence::{CorrespondenceSet, Triplet};

/// `y * d^2 + (1 - y) * max(0, m - d)^2`.
pub fn ccl_pair_loss(d: f64, positive: bool, margin: f64) -> f64 {
    if positive {
        d * d
    } else {
        let h = (margin - d).max(0.0);
        h * h
    }
}

/// Distance between the unit descriptors of `x` (reference) and `x_prime`
/// (target) on hierarchy level `level`.
pub fn pair_distance(
    reference: &FeatureHierarchy,
    target: &FeatureHierarchy,
    level: usize,
    x: Point2,
    x_prime: Point2,
) -> Result<f64> {
    let (mr, mt) = (reference.map(level), target.map(level));
    let a = mr.sample_unit(mr.to_cells(x))?;
    let b = mt.sample_unit(mt.to_cells(x_prime))?;
    Ok(squared_distance(&a, &b).sqrt())
}

/// Triplets to score on each level of one image pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelTriplets {
    pub per_level: Vec<Vec<Triplet>>,
}

impl LevelTriplets {
    /// The same triplets on every one of `levels` levels.
    pub fn broadcast(triplets: &[Triplet], levels: usize) -> Self {
        Self {
            per_level: vec![triplets.to_vec(); levels],
        }
    }
}

/// CCL summed over levels and triplets, unweighted across levels.
pub fn total_loss(
    pairs: &[(FeatureHierarchy, FeatureHierarchy)],
    sets: &[CorrespondenceSet],
    margin: f64,
) -> Result<f64> {
    if pairs.len() != sets.len() {
        return Err(Error::LengthMismatch(pairs.len(), sets.len()));
    }
    let batches: Vec<_> = pairs
        .iter()
        .zip(sets)
        .map(|((r, _), s)| LevelTriplets::broadcast(&s.triplets, r.len()))
        .collect();
    level_triplet_loss(pairs, &batches, margin)
}

/// CCL over explicitly level-tagged triplets, evaluated on full hierarchies.
pub fn level_triplet_loss(
    pairs: &[(FeatureHierarchy, FeatureHierarchy)],
    batches: &[LevelTriplets],
    margin: f64,
) -> Result<f64> {
    if pairs.len() != batches.len() {
        return Err(Error::LengthMismatch(pairs.len(), batches.len()));
    }
    let mut loss = 0.0;
    for ((r, t), batch) in pairs.iter().zip(batches) {
        for (level, triplets) in batch.per_level.iter().enumerate() {
            for tr in triplets {
                let d = pair_distance(r, t, level, tr.x, tr.x_prime)?;
                loss += ccl_pair_loss(d, tr.positive, margin);
            }
        }
    }
    Ok(loss)
}

/// `lambda / 2 * sum ||W||^2` over head weights (biases are not decayed).
pub fn weight_regularization(heads: &[EmbeddingHead], weight_decay: f64) -> f64 {
    0.5 * weight_decay
        * heads
            .iter()
            .flat_map(|h| &h.weights)
            .map(|w| w * w)
            .sum::<f64>()
}

/// Base descriptor maps of a reference/target pair, one per level.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePair {
    pub reference: Vec<FeatureMap>,
    pub target: Vec<FeatureMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGradient {
    fn zeros(head: &EmbeddingHead) -> Self {
        Self {
            weights: vec![0.0; head.weights.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// CCL summed over all levels and triplets.
    pub loss: f64,
    /// Weight-decay penalty added on top of `loss` in the optimized objective.
    pub regularization: f64,
    /// One gradient per head, aligned with the level order.
    pub heads: Vec<HeadGradient>,
}

/// Forward state of one embedded point, kept for back-propagation.
pub(crate) struct EmbeddedPoint {
    corners: Vec<CornerState>,
    blend: Vec<f64>,
    blend_norm: f64,
    pub(crate) descriptor: Vec<f64>,
    integral: bool,
}

struct CornerState {
    cell: usize,
    weight: f64,
    unit: Vec<f64>,
    norm: f64,
}

/// Embeds the point `p` (original pixels) of `base` through `head`.
pub(crate) fn embed_point(base: &FeatureMap, head: &EmbeddingHead, p: Point2) -> Result<EmbeddedPoint> {
    if base.dim != head.rows {
        return Err(Error::DimMismatch {
            expected: head.rows,
            found: base.dim,
        });
    }
    let cp = base.to_cells(p);
    let corners = base.corners(cp)?;
    let integral = cp.is_integral();
    let mut states = Vec::with_capacity(4);
    let mut blend = vec![0.0; head.cols];
    for (i, &(cell, weight)) in corners.as_slice().iter().enumerate() {
        let mut z = head.project(base.descriptor(cell));
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(DEFAULT_NORM_EPS);
        z.iter_mut().for_each(|v| *v /= denom);
        if i == 0 {
            blend.iter_mut().zip(&z).for_each(|(b, u)| *b = weight * u);
        } else {
            blend.iter_mut().zip(&z).for_each(|(b, u)| *b += weight * u);
        }
        states.push(CornerState {
            cell,
            weight,
            unit: z,
            norm,
        });
    }
    let (descriptor, blend_norm) = if integral {
        (states[0].unit.clone(), 1.0)
    } else {
        let n = blend.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = n.max(DEFAULT_NORM_EPS);
        (blend.iter().map(|v| v / denom).collect(), n)
    };
    Ok(EmbeddedPoint {
        corners: states,
        blend,
        blend_norm,
        descriptor,
        integral,
    })
}

/// Back-propagates through `u = v / max(||v||, eps)` given `u`, `||v||` and `dL/du`.
fn normalize_backward(unit: &[f64], norm: f64, grad: &[f64]) -> Vec<f64> {
    if norm >= DEFAULT_NORM_EPS {
        let dot: f64 = unit.iter().zip(grad).map(|(u, g)| u * g).sum();
        unit.iter()
            .zip(grad)
            .map(|(u, g)| (g - u * dot) / norm)
            .collect()
    } else {
        grad.iter().map(|g| g / DEFAULT_NORM_EPS).collect()
    }
}

fn accumulate_point(
    point: &EmbeddedPoint,
    grad_descriptor: &[f64],
    base: &FeatureMap,
    out: &mut HeadGradient,
) {
    let grad_blend = if point.integral {
        grad_descriptor.to_vec()
    } else {
        let unit: Vec<f64> = point
            .blend
            .iter()
            .map(|v| v / point.blend_norm.max(DEFAULT_NORM_EPS))
            .collect();
        normalize_backward(&unit, point.blend_norm, grad_descriptor)
    };
    let cols = grad_blend.len();
    for corner in &point.corners {
        let g_unit: Vec<f64> = grad_blend.iter().map(|g| corner.weight * g).collect();
        let g_z = normalize_backward(&corner.unit, corner.norm, &g_unit);
        for (b, g) in out.bias.iter_mut().zip(&g_z) {
            *b += g;
        }
        for (i, &di) in base.descriptor(corner.cell).iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            let row = &mut out.weights[i * cols..(i + 1) * cols];
            for (w, g) in row.iter_mut().zip(&g_z) {
                *w += di * g;
            }
        }
    }
}

/// Loss and analytic gradients w.r.t. every head.
///
/// `heads[l]` embeds level `l` of every base pair; `batches[p].per_level[l]`
/// lists the triplets scored on level `l` of pair `p`. The gradient includes
/// `weight_decay * W` from the L2 weight penalty.
pub fn loss_gradients<P: Borrow<BasePair>>(
    pairs: &[P],
    batches: &[LevelTriplets],
    heads: &[EmbeddingHead],
    margin: f64,
    weight_decay: f64,
) -> Result<Gradients> {
    if pairs.len() != batches.len() {
        return Err(Error::LengthMismatch(pairs.len(), batches.len()));
    }
    let mut grads: Vec<HeadGradient> = heads.iter().map(HeadGradient::zeros).collect();
    let mut loss = 0.0;
    for (pair, batch) in pairs.iter().zip(batches) {
        let pair = pair.borrow();
        if batch.per_level.len() > heads.len()
            || pair.reference.len() < batch.per_level.len()
            || pair.target.len() < batch.per_level.len()
        {
            return Err(Error::LengthMismatch(batch.per_level.len(), heads.len()));
        }
        for (level, triplets) in batch.per_level.iter().enumerate() {
            let (head, base_r, base_t) = (&heads[level], &pair.reference[level], &pair.target[level]);
            for tr in triplets {
                let a = embed_point(base_r, head, tr.x)?;
                let b = embed_point(base_t, head, tr.x_prime)?;
                let diff: Vec<f64> = a
                    .descriptor
                    .iter()
                    .zip(&b.descriptor)
                    .map(|(p, q)| p - q)
                    .collect();
                let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                loss += ccl_pair_loss(d, tr.positive, margin);
                // dL/d(a - b)
                let scale = if tr.positive {
                    2.0
                } else if d < margin && d > 0.0 {
                    -2.0 * (margin - d) / d
                } else {
                    0.0
                };
                if scale == 0.0 {
                    continue;
                }
                let g_a: Vec<f64> = diff.iter().map(|v| scale * v).collect();
                let g_b: Vec<f64> = g_a.iter().map(|v| -v).collect();
                accumulate_point(&a, &g_a, base_r, &mut grads[level]);
                accumulate_point(&b, &g_b, base_t, &mut grads[level]);
            }
        }
    }
    if weight_decay != 0.0 {
        for (g, h) in grads.iter_mut().zip(heads) {
            for (gw, w) in g.weights.iter_mut().zip(&h.weights) {
                *gw += weight_decay * w;
            }
        }
    }
    Ok(Gradients {
        loss,
        regularization: weight_regularization(heads, weight_decay),
        heads: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{init_heads, Level, LevelConfig};

    #[test]
    fn ccl_values() {
        assert_eq!(ccl_pair_loss(0.0, true, 1.0), 0.0);
        assert!((ccl_pair_loss(0.4, false, 1.0) - 0.36).abs() < 1e-15);
        assert_eq!(ccl_pair_loss(1.5, false, 1.0), 0.0);
        assert_eq!(ccl_pair_loss(0.5, true, 1.0) + ccl_pair_loss(0.1, true, 1.0), 0.26);
    }

    fn unit_map(level_id: u32, f: usize, data: Vec<f64>, w: usize, h: usize, dim: usize) -> Level {
        Level {
            config: LevelConfig::new(level_id, f),
            map: FeatureMap::new(level_id, f, w, h, dim, data, true).unwrap(),
        }
    }

    #[test]
    fn distance_examples() {
        // Level 0: cell 0 = e1, cell 1 = e2. Level 1 (f=2): a single e1 cell.
        let l0 = unit_map(0, 1, vec![1.0, 0.0, 0.0, 1.0], 2, 1, 2);
        let l1 = unit_map(1, 2, vec![1.0, 0.0], 1, 1, 2);
        let h = FeatureHierarchy::new(vec![l0, l1]).unwrap();
        let p0 = Point2::new(0.0, 0.0);
        let p1 = Point2::new(1.0, 0.0);
        assert_eq!(pair_distance(&h, &h, 0, p0, p0).unwrap(), 0.0);
        assert!((pair_distance(&h, &h, 0, p0, p1).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let mid = pair_distance(&h, &h, 0, Point2::new(0.3, 0.0), p1).unwrap();
        assert!((0.0..=2.0).contains(&mid));
        assert!(pair_distance(&h, &h, 0, Point2::new(2.0, 0.0), p1).is_err());
    }

    #[test]
    fn empty_and_identical_sets_have_zero_loss() {
        let cfgs = LevelConfig::default_hierarchy();
        let heads = init_heads(&cfgs, 4);
        let img = crate::image::Image::from_fn(64, 64, |x, y| ((x * 13 + y * 7) % 17) as f64 / 17.0);
        let h = crate::features::extract_hierarchy(&img, &cfgs, &heads).unwrap();
        let pairs = vec![(h.clone(), h)];
        let empty = vec![CorrespondenceSet::default()];
        assert_eq!(total_loss(&pairs, &empty, 1.0).unwrap(), 0.0);
        let same: Vec<Triplet> = (0..10)
            .map(|i| {
                let p = Point2::new(i as f64 * 5.5, i as f64 * 3.0);
                Triplet::positive(p, p)
            })
            .collect();
        let set = vec![CorrespondenceSet::new("a", "a", same)];
        assert_eq!(total_loss(&pairs, &set, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn regularizer_only_gradient() {
        let cfgs = LevelConfig::default_hierarchy();
        let heads = init_heads(&cfgs, 9);
        let pair = BasePair {
            reference: vec![FeatureMap::zeros(0, 1, 4, 4, 72), FeatureMap::zeros(1, 4, 1, 1, 72)],
            target: vec![FeatureMap::zeros(0, 1, 4, 4, 72), FeatureMap::zeros(1, 4, 1, 1, 72)],
        };
        let g = loss_gradients(&[pair], &[LevelTriplets::default()], &heads, 1.0, 1e-4).unwrap();
        for (gh, h) in g.heads.iter().zip(&heads) {
            for (a, w) in gh.weights.iter().zip(&h.weights) {
                assert_eq!(*a, 1e-4 * w);
            }
            assert!(gh.bias.iter().all(|&b| b == 0.0));
        }
        assert_eq!(g.loss, 0.0);
    }
}
