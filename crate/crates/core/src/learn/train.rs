//! Seed-deterministic ADAM training of the embedding heads with per-level
//! hard-negative mining.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{apply_head, compute_base_pyramid, init_heads, validate_levels, EmbeddingHead, LevelConfig};
use crate::image::{Image, Point2};
use crate::learn::adam::{adam_step, AdamConfig, AdamState};
use crate::learn::correspondence::{CorrespondenceSet, Triplet};
use crate::learn::loss::{embed_point, loss_gradients, BasePair, LevelTriplets};
use crate::learn::mining::{mine_hard_negatives, Anchor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    /// Mining exclusion window in original pixels, rounded up to whole cells per level.
    pub positive_window: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub weight_decay: f64,
    pub pairs_per_batch: usize,
    pub correspondences_per_pair: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            positive_window: 8.0,
            learning_rate: 1e-3,
            iterations: 2000,
            weight_decay: 1e-4,
            pairs_per_batch: 3,
            correspondences_per_pair: 1000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.positive_window >= 1.0) {
            return bad("positive window must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.pairs_per_batch == 0 || self.correspondences_per_pair == 0 {
            return bad("batch sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("invalid ADAM hyper-parameters");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// An image pair with its positive correspondences.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub reference: Image,
    pub target: Image,
    pub positives: CorrespondenceSet,
}

/// Precomputed base descriptors of a pair plus positive `(x, x')` matches.
#[derive(Clone, Debug)]
pub struct BaseTrainingPair {
    pub base: BasePair,
    pub positives: Vec<(Point2, Point2)>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub heads: Vec<EmbeddingHead>,
    /// Batch CCL loss at the start of each iteration, before the update.
    pub loss_log: Vec<f64>,
}

pub fn train(pairs: &[TrainingPair], cfgs: &[LevelConfig], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let base_pairs = pairs
        .iter()
        .map(|p| {
            if p.positives.triplets.iter().any(|t| !t.positive) {
                return Err(Error::InvalidConfig(
                    "training expects positive correspondences only; negatives are mined".into(),
                ));
            }
            Ok(BaseTrainingPair {
                base: BasePair {
                    reference: compute_base_pyramid(&p.reference, cfgs)?,
                    target: compute_base_pyramid(&p.target, cfgs)?,
                },
                positives: p.positives.triplets.iter().map(|t| (t.x, t.x_prime)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_from_base(&base_pairs, cfgs, cfg)
}

/// Training loop over precomputed base descriptors.
///
/// Positives that fall outside any level's grid in either image are ignored.
pub fn train_from_base(
    pairs: &[BaseTrainingPair],
    cfgs: &[LevelConfig],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    validate_levels(cfgs)?;
    for p in pairs {
        for side in [&p.base.reference, &p.base.target] {
            if side.len() != cfgs.len() {
                return Err(Error::LengthMismatch(side.len(), cfgs.len()));
            }
            for (m, c) in side.iter().zip(cfgs) {
                if m.dim != c.base_dim() {
                    return Err(Error::DimMismatch {
                        expected: c.base_dim(),
                        found: m.dim,
                    });
                }
            }
        }
    }
    let usable: Vec<(&BaseTrainingPair, Vec<(Point2, Point2)>)> = pairs
        .iter()
        .map(|p| {
            let kept = p
                .positives
                .iter()
                .copied()
                .filter(|&(x, xp)| {
                    p.base.reference.iter().zip(&p.base.target).all(|(r, t)| {
                        r.contains_cell_point(r.to_cells(x)) && t.contains_cell_point(t.to_cells(xp))
                    })
                })
                .collect::<Vec<_>>();
            (p, kept)
        })
        .filter(|(_, kept)| !kept.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut heads = init_heads(cfgs, cfg.rng_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(1);
    let adam = cfg.adam();
    let mut states: Vec<(AdamState, AdamState)> = heads
        .iter()
        .map(|h| (AdamState::new(h.weights.len()), AdamState::new(h.bias.len())))
        .collect();
    let mut loss_log = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let mut batch_pairs: Vec<&BasePair> = Vec::with_capacity(cfg.pairs_per_batch);
        let mut batches = Vec::with_capacity(cfg.pairs_per_batch);
        for _ in 0..cfg.pairs_per_batch {
            let (pair, positives) = &usable[rng.gen_range(0..usable.len())];
            let chosen = sample_positives(&mut rng, positives, cfg.correspondences_per_pair);
            let batch = assemble_level_triplets(&pair.base, &heads, &chosen, cfg.positive_window)?;
            batch_pairs.push(&pair.base);
            batches.push(batch);
        }
        let grads = loss_gradients(&batch_pairs, &batches, &heads, cfg.margin, cfg.weight_decay)?;
        loss_log.push(grads.loss);
        for ((head, g), (sw, sb)) in heads.iter_mut().zip(&grads.heads).zip(states.iter_mut()) {
            adam_step(&mut head.weights, &g.weights, sw, &adam);
            adam_step(&mut head.bias, &g.bias, sb, &adam);
        }
    }
    Ok(TrainOutcome { heads, loss_log })
}

fn sample_positives<R: Rng>(rng: &mut R, positives: &[(Point2, Point2)], k: usize) -> Vec<(Point2, Point2)> {
    if positives.len() >= k {
        index::sample(rng, positives.len(), k)
            .into_iter()
            .map(|i| positives[i])
            .collect()
    } else {
        (0..k)
            .map(|_| positives[rng.gen_range(0..positives.len())])
            .collect()
    }
}

/// Positives on every level plus one mined hardest negative per positive per level.
pub fn assemble_level_triplets(
    base: &BasePair,
    heads: &[EmbeddingHead],
    positives: &[(Point2, Point2)],
    window: f64,
) -> Result<LevelTriplets> {
    let mut per_level = Vec::with_capacity(heads.len());
    for (level, head) in heads.iter().enumerate() {
        let target = apply_head(&base.target[level], head)?;
        let anchors = positives
            .iter()
            .map(|&(x, x_prime)| {
                Ok(Anchor {
                    x,
                    descriptor: embed_point(&base.reference[level], head, x)?.descriptor,
                    x_prime,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let negatives = mine_hard_negatives(&anchors, &target, window)?;
        let mut triplets: Vec<Triplet> = positives
            .iter()
            .map(|&(x, xp)| Triplet::positive(x, xp))
            .collect();
        triplets.extend(negatives);
        per_level.push(triplets);
    }
    Ok(LevelTriplets { per_level })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_levels() -> Vec<LevelConfig> {
        [1, 2]
            .iter()
            .enumerate()
            .map(|(i, &f)| LevelConfig {
                level_id: i as u32,
                scale_factor: f,
                cell_size: 2,
                grid: 2,
                orientation_bins: 4,
                head_out_dim: 4,
            })
            .collect()
    }

    fn pair(seed: u64) -> TrainingPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(24, 24, |_, _| rng.gen());
        let triplets = (0..20)
            .map(|i| {
                let p = Point2::new((i % 5 * 4 + 2) as f64, (i / 5 * 4 + 3) as f64);
                Triplet::positive(p, p)
            })
            .collect();
        TrainingPair {
            reference: img.clone(),
            target: img,
            positives: CorrespondenceSet::new("a", "b", triplets),
        }
    }

    fn cfg(iterations: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            pairs_per_batch: 2,
            correspondences_per_pair: 8,
            positive_window: 4.0,
            rng_seed: seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_returns_init() {
        let out = train(&[pair(1)], &small_levels(), &cfg(0, 9)).unwrap();
        assert_eq!(out.heads, init_heads(&small_levels(), 9));
        assert!(out.loss_log.is_empty());
    }

    #[test]
    fn same_seed_same_run() {
        let pairs = [pair(1), pair(2)];
        let a = train(&pairs, &small_levels(), &cfg(5, 3)).unwrap();
        let b = train(&pairs, &small_levels(), &cfg(5, 3)).unwrap();
        assert_eq!(a.loss_log, b.loss_log);
        assert_eq!(a.heads, b.heads);
        assert_eq!(a.loss_log.len(), 5);
        let c = train(&pairs, &small_levels(), &cfg(5, 4)).unwrap();
        assert_ne!(a.loss_log, c.loss_log);
    }

    #[test]
    fn rejects_negative_labels_and_empty_data() {
        let mut p = pair(1);
        p.positives.triplets[0].positive = false;
        assert!(matches!(train(&[p], &small_levels(), &cfg(1, 0)), Err(Error::InvalidConfig(_))));
        let mut far = pair(1);
        far.positives.triplets = vec![Triplet::positive(Point2::new(100.0, 0.0), Point2::new(0.0, 0.0))];
        assert!(matches!(train(&[far], &small_levels(), &cfg(1, 0)), Err(Error::EmptyDataset)));
    }
}
