use std::collections::BTreeMap;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cmc::{cmc, make_split, CmcCurve, Metric};
use super::stats::{image_stats, stats_distance};
use crate::domain_translation::{foreground_color_shift, train_translation, translate, Ablation, TranslationConfig};
use crate::error::{Error, Result};
use crate::illum_inference::{infer_domain, train_illum_classifier, IllumArch};
use crate::reid_model::{finetune, train_joint, FeatureExtractor, ReidArch};
use crate::synth_data::{generate_benchmark, Benchmark, BenchmarkConfig, Dataset};
use crate::train::TrainConfig;
use crate::util::derive_seed;

/// One row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// trained on the real source cameras only
    BaselineR,
    /// trained on real sources and every synthetic domain, not adapted
    RPlusS,
    /// fine-tuned on the inferred domain translated with adversarial + cycle losses
    Cyclegan,
    /// ... plus the identity-mapping loss
    CycleganId,
    /// ... plus the unmasked reference loss
    CycleganRef,
    /// ... plus identity-mapping and matte-weighted losses
    Ours,
    /// as `Ours` on a uniformly drawn synthetic domain instead of the inferred one
    OursRandomK,
}

impl Condition {
    pub const ALL: [Condition; 7] =
        [Condition::BaselineR, Condition::RPlusS, Condition::Cyclegan, Condition::CycleganId, Condition::CycleganRef, Condition::Ours, Condition::OursRandomK];

    pub fn name(self) -> &'static str {
        match self {
            Condition::BaselineR => "baseline_r",
            Condition::RPlusS => "r_plus_s",
            Condition::Cyclegan => "cyclegan",
            Condition::CycleganId => "cyclegan_id",
            Condition::CycleganRef => "cyclegan_ref",
            Condition::Ours => "ours",
            Condition::OursRandomK => "ours_random_k",
        }
    }

    fn ablation(self) -> Option<Ablation> {
        match self {
            Condition::Cyclegan => Some(Ablation::None),
            Condition::CycleganId => Some(Ablation::Id),
            Condition::CycleganRef => Some(Ablation::Ref),
            Condition::Ours | Condition::OursRandomK => Some(Ablation::MaskFull),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub benchmark: BenchmarkConfig,
    pub seeds: Vec<u64>,
    pub conditions: Vec<Condition>,
    /// random domain draws per seed for `ours_random_k`
    pub random_draws: usize,
    pub metric: Metric,
    pub reid_arch: ReidArch,
    pub reid_train: TrainConfig,
    pub illum_arch: IllumArch,
    pub illum_train: TrainConfig,
    pub translation: TranslationConfig,
    pub finetune: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            benchmark: BenchmarkConfig::default(),
            seeds: vec![0, 1, 2],
            conditions: Condition::ALL.to_vec(),
            random_draws: 3,
            metric: Metric::Cosine,
            reid_arch: ReidArch::default(),
            reid_train: TrainConfig::default_reid(),
            illum_arch: IllumArch::default(),
            illum_train: TrainConfig::default_illum(),
            translation: TranslationConfig::new(0),
            finetune: TrainConfig::default_finetune(),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        self.reid_arch.validate()?;
        self.reid_train.validate()?;
        self.illum_train.validate()?;
        self.translation.validate()?;
        self.finetune.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::validation("ablation needs at least one seed"));
        }
        if self.conditions.is_empty() {
            return Err(Error::validation("ablation needs at least one condition"));
        }
        if self.conditions.contains(&Condition::OursRandomK) && self.random_draws == 0 {
            return Err(Error::validation("random_draws must be ≥ 1 when ours_random_k is requested"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub condition: Condition,
    pub seed: u64,
    pub rank1: f64,
    pub cmc: Vec<f64>,
    /// synthetic domain used for translation, if any
    pub domain: Option<u32>,
    /// draw index for `ours_random_k`
    pub draw: Option<usize>,
}

/// Measurements of one translation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationDiagnostics {
    pub ablation: Ablation,
    pub domain: u32,
    pub first_epoch_cycle: f64,
    pub final_cycle: f64,
    pub final_masked_reg: f64,
    /// per-channel |Δ mean color| in the matte core, [0,1] units
    pub foreground_color_shift: [f64; 3],
    pub stats_distance_translated_target: f64,
    pub stats_distance_synthetic_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDiagnostics {
    pub seed: u64,
    pub target_anchor: usize,
    pub k_star: usize,
    pub vote_counts: Vec<usize>,
    pub illum_heldout_accuracy: f64,
    pub reid_train_accuracy: f64,
    pub translations: Vec<TranslationDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub records: Vec<AblationRecord>,
    /// mean rank-1 per condition over all its records
    pub means: BTreeMap<String, f64>,
    /// mean over seeds of the worst random draw
    pub random_k_min_mean: Option<f64>,
    pub diagnostics: Vec<SeedDiagnostics>,
    pub config: AblationConfig,
}

impl AblationReport {
    pub fn rank1(&self, condition: Condition, seed: u64) -> Vec<f64> {
        self.records.iter().filter(|r| r.condition == condition && r.seed == seed).map(|r| r.rank1).collect()
    }

    pub fn mean(&self, condition: Condition) -> Option<f64> {
        self.means.get(condition.name()).copied()
    }
}

fn evaluate(model: &FeatureExtractor<f32>, bench: &Benchmark, seed: u64, metric: Metric) -> Result<CmcCurve> {
    let split = make_split(model, &bench.probe, &bench.gallery, derive_seed(seed, "split"))?;
    cmc(&split, metric)
}

fn seeded(cfg: &TrainConfig, seed: u64, label: &str) -> TrainConfig {
    TrainConfig { seed: derive_seed(seed, label), ..cfg.clone() }
}

struct SeedRun<'a> {
    config: &'a AblationConfig,
    seed: u64,
    bench: Benchmark,
    pool: Dataset,
    joint: Option<FeatureExtractor<f32>>,
    /// (ablation, domain index) → (rank-1 curve)
    adapted: BTreeMap<(Ablation, usize), CmcCurve>,
    translations: Vec<TranslationDiagnostics>,
}

impl SeedRun<'_> {
    fn adapt(&mut self, ablation: Ablation, k: usize) -> Result<CmcCurve> {
        if let Some(c) = self.adapted.get(&(ablation, k)) {
            return Ok(c.clone());
        }
        let seed = self.seed;
        let source = &self.bench.synthetic[k];
        let tcfg = TranslationConfig { ablation, seed: derive_seed(seed, "translation"), ..self.config.translation.clone() };
        let (model, report) = train_translation::<f32>(source, &self.pool, &tcfg)?;
        let translated = translate(&model, source)?;
        let target_stats = image_stats(&self.pool)?;
        let diag = TranslationDiagnostics {
            ablation,
            domain: self.bench.catalog[k].illum_id,
            first_epoch_cycle: report.epochs.first().map_or(f64::NAN, |e| e.cycle),
            final_cycle: report.epochs.last().map_or(f64::NAN, |e| e.cycle),
            final_masked_reg: report.final_masked_reg_loss,
            foreground_color_shift: foreground_color_shift(source, &translated, &model.matte)?,
            stats_distance_translated_target: stats_distance(&image_stats(&translated)?, &target_stats),
            stats_distance_synthetic_target: stats_distance(&image_stats(source)?, &target_stats),
        };
        self.translations.push(diag);
        let joint = self.joint.as_ref().expect("joint model trained before adaptation");
        let (tuned, _) = finetune(joint, &translated, &seeded(&self.config.finetune, seed, "finetune"))?;
        let curve = evaluate(&tuned, &self.bench, seed, self.config.metric)?;
        self.adapted.insert((ablation, k), curve.clone());
        Ok(curve)
    }
}

fn run_seed(config: &AblationConfig, seed: u64, records: &mut Vec<AblationRecord>) -> Result<SeedDiagnostics> {
    let bench = generate_benchmark(&config.benchmark, seed)?;
    let pool = bench.target_pool()?;
    let want = |c: Condition| config.conditions.contains(&c);
    let push = |records: &mut Vec<AblationRecord>, condition, curve: &CmcCurve, domain, draw| {
        info!("ablation seed {seed}: {} rank-1 {:.3}", Condition::name(condition), curve.rank1());
        records.push(AblationRecord { condition, seed, rank1: curve.rank1(), cmc: curve.accuracies.clone(), domain, draw });
    };
    let tag = |c: Condition| move |e: Error| e.in_stage(&format!("ablation {} seed {seed}", c.name()));

    if want(Condition::BaselineR) {
        let curve = train_joint::<f32>(&bench.real_sources, &config.reid_arch, &seeded(&config.reid_train, seed, "train-reid-r"))
            .and_then(|(m, _)| evaluate(&m, &bench, seed, config.metric))
            .map_err(tag(Condition::BaselineR))?;
        push(records, Condition::BaselineR, &curve, None, None);
    }

    let mut run = SeedRun { config, seed, bench, pool, joint: None, adapted: BTreeMap::new(), translations: Vec::new() };
    let mut diag = SeedDiagnostics {
        seed,
        target_anchor: run.bench.target_anchor,
        k_star: 0,
        vote_counts: Vec::new(),
        illum_heldout_accuracy: f64::NAN,
        reid_train_accuracy: f64::NAN,
        translations: Vec::new(),
    };
    let adapted: Vec<Condition> = config.conditions.iter().copied().filter(|c| c.ablation().is_some()).collect();
    if want(Condition::RPlusS) || !adapted.is_empty() {
        let mut sets = run.bench.real_sources.clone();
        sets.push(Dataset::merge("synthetic", &run.bench.synthetic)?);
        let (joint, rep) = train_joint::<f32>(&sets, &config.reid_arch, &seeded(&config.reid_train, seed, "train-reid")).map_err(tag(Condition::RPlusS))?;
        diag.reid_train_accuracy = rep.final_train_accuracy;
        if want(Condition::RPlusS) {
            let curve = evaluate(&joint, &run.bench, seed, config.metric).map_err(tag(Condition::RPlusS))?;
            push(records, Condition::RPlusS, &curve, None, None);
        }
        run.joint = Some(joint);
    }
    if !adapted.is_empty() {
        let (classifier, rep) = train_illum_classifier::<f32>(&run.bench.synthetic, &config.illum_arch, &seeded(&config.illum_train, seed, "train-illum"))?;
        let selection = infer_domain(&classifier, &run.pool.images())?;
        info!("ablation seed {seed}: inferred domain {} (target drawn near {})", selection.k_star, run.bench.target_anchor);
        diag.k_star = selection.k_star;
        diag.vote_counts = selection.vote_counts.clone();
        diag.illum_heldout_accuracy = rep.heldout_accuracy;
        for &c in adapted.iter().filter(|&&c| c != Condition::OursRandomK) {
            let curve = run.adapt(c.ablation().expect("adapted condition"), selection.k_star).map_err(tag(c))?;
            let domain = run.bench.catalog[selection.k_star].illum_id;
            push(records, c, &curve, Some(domain), None);
        }
        if want(Condition::OursRandomK) {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "random-domain"));
            for draw in 0..config.random_draws {
                let k = rng.random_range(0..run.bench.synthetic.len());
                let curve = run.adapt(Ablation::MaskFull, k).map_err(tag(Condition::OursRandomK))?;
                let domain = run.bench.catalog[k].illum_id;
                push(records, Condition::OursRandomK, &curve, Some(domain), Some(draw));
            }
        }
    }
    diag.translations = run.translations;
    Ok(diag)
}

/// Runs every configured condition for every seed and tabulates rank-1.
pub fn run_ablation(config: &AblationConfig) -> Result<AblationReport> {
    config.validate()?;
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for &seed in &config.seeds {
        diagnostics.push(run_seed(config, seed, &mut records)?);
    }
    let mut means = BTreeMap::new();
    for c in &config.conditions {
        let vals: Vec<f64> = records.iter().filter(|r| r.condition == *c).map(|r| r.rank1).collect();
        if !vals.is_empty() {
            means.insert(c.name().to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let random_k_min_mean = config.conditions.contains(&Condition::OursRandomK).then(|| {
        let per_seed: Vec<f64> = config
            .seeds
            .iter()
            .map(|&s| records.iter().filter(|r| r.condition == Condition::OursRandomK && r.seed == s).map(|r| r.rank1).fold(f64::INFINITY, f64::min))
            .collect();
        per_seed.iter().sum::<f64>() / per_seed.len() as f64
    });
    Ok(AblationReport { records, means, random_k_min_mean, diagnostics, config: config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain_translation::TranslatorArch;

    /// Smallest configuration that still exercises every code path.
    fn micro() -> AblationConfig {
        let mut c = AblationConfig::default();
        c.benchmark = BenchmarkConfig {
            identities: 3,
            illuminations: 2,
            samples_per_identity: 2,
            real_domains: 1,
            real_identities: 2,
            real_samples_per_identity: 2,
            test_identities: 3,
            test_samples_per_camera: 1,
            height: 16,
            width: 16,
            ..BenchmarkConfig::default()
        };
        c.seeds = vec![0, 1];
        c.random_draws = 2;
        c.reid_arch = ReidArch { height: 16, width: 16, embed_dim: 4, conv_widths: vec![4, 4] };
        c.illum_arch = IllumArch { height: 16, width: 16, conv_widths: vec![4] };
        for t in [&mut c.reid_train, &mut c.illum_train, &mut c.finetune] {
            t.epochs = 1;
            t.batch_size = 8;
        }
        c.translation.epochs = 1;
        c.translation.arch = TranslatorArch { height: 16, width: 16, base_width: 2, residual_blocks: 2, discriminator_width: 2, ..TranslatorArch::default() };
        c
    }

    #[test]
    fn report_covers_the_condition_seed_grid() {
        let cfg = micro();
        let report = run_ablation(&cfg).unwrap();
        for &seed in &cfg.seeds {
            for c in Condition::ALL {
                let expected = if c == Condition::OursRandomK { 2 } else { 1 };
                assert_eq!(report.rank1(c, seed).len(), expected, "{c:?} seed {seed}");
            }
        }
        assert_eq!(report.records.len(), 2 * 8);
        assert_eq!(report.means.len(), 7);
        assert!(report.records.iter().all(|r| (0.0..=1.0).contains(&r.rank1) && r.cmc.last() == Some(&1.0)));
        assert!(report.random_k_min_mean.is_some());
    }

    #[test]
    fn subset_of_conditions_is_respected() {
        let cfg = AblationConfig { conditions: vec![Condition::BaselineR], seeds: vec![3], ..micro() };
        let report = run_ablation(&cfg).unwrap();
        assert_eq!(report.records.len(), 1);
        assert!(report.diagnostics[0].translations.is_empty());
    }
}
