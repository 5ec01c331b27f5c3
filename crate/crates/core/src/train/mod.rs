//! Training objectives, the synthetic corpus and the adversarial loop.

mod config;
mod data;
mod fit;
mod losses;

pub use config::{RunConfig, TrainConfig};
pub use data::{synth_dataset, Dataset, TrackPair};
pub use fit::{
    best_val_lsd, evaluate_lsd, fit, generator_checkpoint, load_generator, total_steps, FitOutcome, StepRecord,
    BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
pub use losses::{
    loss_adversarial_g, loss_discriminator, loss_feature_matching, loss_generator_total, loss_reconstruction,
    LossReport, DEFAULT_LAMBDA, LOG_MAG_EPSILON,
};
