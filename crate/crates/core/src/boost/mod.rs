//! Second-order gradient-boosted decision trees for binary logistic loss.

mod params;
mod train;
mod tree;

pub use params::{BoostParams, ScalePosWeight, TreeMethod};
pub use train::{
    leaf_weight, node_score, soft_threshold, train, train_with, RoundRecord, TrainOptions,
    Training, Validation,
};
pub use tree::{Ensemble, Node, NodeKind, Tree};
