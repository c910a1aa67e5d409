//! Registration model, losses, metrics and rotation utilities.

mod eval;
mod loss;
mod metrics;
mod model;
mod stats;
mod train;
mod warp;

pub use eval::{
    aggregate, evaluate_pair, evaluate_with_field, label_metrics, predict, unregistered_metrics, Aggregate, MeanStd,
    MetricsRecord, PairMetrics,
};
pub use loss::{ncc_loss, smoothness_loss, total_loss, LossConfig, LossParts, DEFAULT_NCC_EPS};
pub use metrics::{assd, assd_mean, dice, foreground_labels, surface_voxels, DiceScores};
pub use model::{ModelConfig, RegistrationModel, Variant, DEFAULT_DECODER, HEAD_INIT_STD};
pub use stats::{wilcoxon_signed_rank, wilcoxon_with, PMethod, WilcoxonResult, EXACT_MAX_N, MIN_PAIRS};
pub use train::{train, TrainConfig, TrainLog};
pub use warp::{rotate_labels, rotate_volume, warp_image, warp_labels, DEFAULT_ROTATION_AXIS};
