//! Staged training, evaluation, ablations, checkpoints and run manifests.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod train;

pub use ablation::{load_variants, parse_variants, rows_to_csv, run_ablation, AblationRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState, CHECKPOINT_VERSION};
pub use config::{AblationVariant, CriticKind, NetworkDims, RefinementKind, TrainConfig};
pub use eval::{evaluate, evaluate_state, score, EvalReport};
pub use manifest::{git_blob_hash, sha256_hex, Manifest};
pub use model::{Model, Stage};
pub use train::{
    epoch_order, resume, run_epochs, stage1_pretrain, stage2_train_generator, stage3_adversarial, EpochLog,
    StageOutcome,
};
