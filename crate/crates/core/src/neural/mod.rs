//! Small feedforward networks trained with NAdam on a mean-absolute-error
//! loss.

mod gemm;
pub mod io;
pub mod network;
pub mod optim;
pub mod train;

pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION};
pub use network::{Activation, LayerSpec, NetworkModel, NetworkSpec, DEFAULT_HIDDEN_WIDTHS};
pub use optim::{nadam_step, NAdamHyper, NAdamState};
pub use train::{
    evaluate_mae, mae_loss, train, train_with, EpochRecord, Refresh, Samples, TrainConfig,
    TrainHistory, TrainOutcome,
};
