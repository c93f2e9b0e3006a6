use illumreid::domain_translation::{train_translation, Ablation, TranslationConfig, TranslatorArch};
use illumreid::synth_data::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (Dataset, Dataset, TranslationConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let frame = FrameSize { height: 32, width: 16 };
    let cat = sample_illumination_catalog(3, &mut rng).unwrap();
    let ids = sample_identities(6, 0, &mut rng).unwrap();
    let src = generate_domain(&ids, &cat[0], 2, 1, frame).unwrap();
    let tgt_ids = sample_identities(6, 500, &mut rng).unwrap();
    let tgt = generate_target_domain(&tgt_ids, &cat[2], 2, &RealnessGap::default(), 2, frame, &[]).unwrap();
    let mut cfg = TranslationConfig::new(5);
    cfg.arch = TranslatorArch { height: 32, width: 16, base_width: 8, residual_blocks: 2, discriminator_width: 8, ..TranslatorArch::default() };
    cfg.epochs = 4;
    (src, tgt, cfg)
}

#[test]
fn masked_regularizer_keeps_its_own_loss_at_or_below_the_unregularized_run() {
    let (src, tgt, cfg) = setup();
    let (_, free) = train_translation::<f32>(&src, &tgt, &TranslationConfig { ablation: Ablation::None, ..cfg.clone() }).unwrap();
    let (_, masked) = train_translation::<f32>(&src, &tgt, &TranslationConfig { ablation: Ablation::MaskFull, ..cfg }).unwrap();
    assert!(masked.final_masked_reg_loss <= free.final_masked_reg_loss, "{} vs {}", masked.final_masked_reg_loss, free.final_masked_reg_loss);
}

#[test]
fn unregularized_training_logs_finite_cycle_losses() {
    let (src, tgt, cfg) = setup();
    let (_, rep) = train_translation::<f32>(&src, &tgt, &TranslationConfig { ablation: Ablation::None, ..cfg }).unwrap();
    assert_eq!(rep.epochs.len(), 4);
    assert!(rep.epochs.iter().all(|e| e.cycle.is_finite() && e.cycle >= 0.0 && e.cycle < 2.0));
}
