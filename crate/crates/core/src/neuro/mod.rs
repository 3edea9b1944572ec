//! Feed-forward networks trained from scratch: dense layers with ReLU and
//! inverted dropout, the three regression losses with analytic gradients,
//! Adam, and a minibatch training loop with best-on-validation selection.

mod adam;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_model, meta_path, read_checkpoint, save_model, write_checkpoint, CheckpointMeta, FeatureScaling};
pub use loss::{mae_loss, mse_loss, mtl_loss, plcc, plcc_loss, verify_plcc_mse_equivalence, LossKind};
pub use model::{
    build_mtl_head, build_regressor, Activation, ArchitectureSpec, Dense, ForwardCache, Gradients,
    LayerGradient, Mode, NetworkModel,
};
pub use train::{
    evaluate_loss, gradient_check, learning_rate_sweep, train, write_history_csv, EpochRecord,
    TrainConfig, TrainOutcome, TrainingData,
};
