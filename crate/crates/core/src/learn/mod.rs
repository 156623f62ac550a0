//! Correspondence contrastive learning of the per-level embedding heads.

mod adam;
mod correspondence;
mod loss;
mod mining;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use correspondence::{read_correspondences, write_correspondences, CorrespondenceSet, Triplet};
pub use loss::{
    ccl_pair_loss, level_triplet_loss, loss_gradients, pair_distance, total_loss,
    weight_regularization, BasePair, Gradients, HeadGradient, LevelTriplets,
};
pub use mining::{exclusion_radius, mine_hard_negatives, Anchor};
pub use train::{
    assemble_level_triplets, train, train_from_base, BaseTrainingPair, TrainConfig, TrainOutcome,
    TrainingPair,
};

pub(crate) use mining::bounded_sq_distance;
