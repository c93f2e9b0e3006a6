//! Unpaired source → target translation with cycle consistency and
//! foreground-weighted semantic-shift regularization.

mod losses;
mod matte;
mod model;
mod training;

pub use losses::{
    adversarial_loss, adversarial_loss_grad, cycle_loss, cycle_loss_grad, full_objective, identity_mapping_loss, identity_mapping_loss_grad, masked_reg_loss,
    masked_reg_loss_grad, ref_loss, ref_loss_grad, AdversarialMode, Lambdas, ObjectiveTerms, SCORE_EPS,
};
pub use matte::{make_soft_matte, SoftMatte, DEFAULT_SIGMA_FRAC};
pub use model::{translate, Generator, GeneratorInit, TranslationModel, TranslatorArch, CHECKPOINT_VERSION, TRANSLATED_DOMAIN_BASE};
pub use training::{foreground_color_shift, train_translation, Ablation, EpochLosses, TranslationConfig, TranslationReport};
