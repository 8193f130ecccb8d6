//! Losses, gradient verification, calibration and the two-stage trainer.

mod calibrate;
mod gradcheck;
mod losses;
mod trainer;

use sha2::{Digest, Sha256};

pub use calibrate::{
    calibrate, dump_activations, shifted_profiles, Calibration, CalibrationConfig, DumpMode,
    DEFAULT_BETA,
};
pub use gradcheck::{check_gradient, check_gradient_vec, GradCheckConfig, GradCheckReport};
pub use losses::{
    combined_loss, content_range, info_nce, mcl_loss, mcl_loss_layer, msft_loss, CombinedOutput,
    LossOutput, MclConfig, MclOutput, Sample, TranslationPair, TranslationPairBatch,
    DEFAULT_TEMPERATURE,
};
pub use trainer::{
    train_stage1, train_stage2, train_two_stage, LogRecord, Sgd, TrainingConfig, TrainingLog,
    TwoStageResult, Variant,
};

/// Independent sub-seed for a named consumer of the master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
