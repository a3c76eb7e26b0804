//! Optimizers, per-fold training with best-epoch checkpoint selection,
//! cross-validation, majority-vote ensembling and evaluation reports.

mod fold;
mod optim;
mod report;
mod vote;

pub use fold::{
    accuracy, batch_tensor, predict_probabilities, run_cv, threshold, train_cv_fold, train_fold, EpochRecord,
    FoldResult, TrainConfig, DECISION_THRESHOLD,
};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use report::{comparison_table, evaluate, fingerprint, Confusion, FoldModel, VotingReport};
pub use vote::majority_vote;
