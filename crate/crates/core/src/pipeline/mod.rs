//! End-to-end adaptation toward one target camera, with per-stage checkpoints
//! in an experiment directory.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{load_ablation_config, parse_config_text, validate_config, ExperimentConfig, IllumStage, ReidStage, TargetDirs, SCHEMA_VERSION};

use crate::domain_translation::{train_translation, translate, TranslationConfig, TranslationModel};
use crate::error::{Error, Result};
use crate::eval::{cmc, make_split, Metric};
use crate::illum_inference::{infer_domain, train_illum_classifier, DomainSelection, IlluminationClassifier};
use crate::reid_model::{finetune, train_joint, FeatureExtractor};
use crate::synth_data::{generate_benchmark, Benchmark, Dataset, IlluminationSpec, MANIFEST_FILE};
use crate::train::TrainConfig;
use crate::util::{derive_seed, hash_json, read_json, write_json};

pub const STAGES: [&str; 8] = ["gen-data", "train-reid", "train-illum", "infer-illum", "train-translate", "translate", "finetune", "evaluate"];

pub const LOCK_FILE: &str = "run.lock";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// relative to the experiment directory
    pub artifact: PathBuf,
    pub config_hash: String,
    pub wall_seconds: f64,
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScores {
    pub rank1: f64,
    pub cmc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub metric: Metric,
    /// the jointly trained model before adaptation
    pub baseline: RankScores,
    pub adapted: RankScores,
    pub k_star: usize,
    pub selected_domain: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// the configuration with every default filled in
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    pub k_star: usize,
    pub metrics: PipelineMetrics,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Written next to each artifact's stage to tie it to the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    config_hash: String,
    artifact: PathBuf,
}

/// Holds `run.lock` for the lifetime of a run.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::validation(format!("{} is in use by another run (delete {} if that run is gone)", dir.display(), path.display())))
            }
            Err(e) => Err(Error::io(format!("creating {}", path.display()), e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Generated or supplied datasets of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// one dataset per synthetic illumination, ascending domain id
    pub synthetic: Vec<Dataset>,
    pub real_sources: Vec<Dataset>,
    pub probe: Dataset,
    pub gallery: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BenchmarkInfo {
    catalog: Vec<IlluminationSpec>,
    target_illumination: Option<IlluminationSpec>,
    target_anchor: Option<usize>,
    real_sources: usize,
}

impl ExperimentData {
    pub fn target_pool(&self) -> Result<Dataset> {
        Dataset::merge("target-pool", &[self.probe.clone(), self.gallery.clone()])
    }

    /// Splits a generated benchmark into its datasets and the description stored beside them.
    fn from_benchmark(bench: Benchmark) -> (Self, BenchmarkInfo) {
        let info = BenchmarkInfo {
            catalog: bench.catalog,
            target_illumination: Some(bench.target_illumination),
            target_anchor: Some(bench.target_anchor),
            real_sources: bench.real_sources.len(),
        };
        (ExperimentData { synthetic: bench.synthetic, real_sources: bench.real_sources, probe: bench.probe, gallery: bench.gallery }, info)
    }

    /// All synthetic domains as one dataset.
    pub fn synthetic_merged(&self) -> Dataset {
        let mut synthetic = Dataset::new("synthetic", self.probe.frame());
        for d in &self.synthetic {
            synthetic.samples.extend(d.samples.iter().cloned());
        }
        synthetic
    }

    fn write(&self, dir: &Path, info: &BenchmarkInfo) -> Result<()> {
        self.synthetic_merged().write(&dir.join("synthetic"))?;
        for (m, r) in self.real_sources.iter().enumerate() {
            r.write(&dir.join(format!("real_{m}")))?;
        }
        self.probe.write(&dir.join("probe"))?;
        self.gallery.write(&dir.join("gallery"))?;
        write_json(&dir.join("benchmark.json"), info)
    }

    /// Reads the layout written by [`write_benchmark`].
    pub fn read(dir: &Path) -> Result<Self> {
        let info: BenchmarkInfo = read_json(&dir.join("benchmark.json"))?;
        let all = Dataset::read(&dir.join("synthetic"))?;
        let synthetic = all.domain_ids().into_iter().map(|d| all.domain(d)).collect();
        let real_sources = (0..info.real_sources).map(|m| Dataset::read(&dir.join(format!("real_{m}")))).collect::<Result<_>>()?;
        Ok(ExperimentData { synthetic, real_sources, probe: Dataset::read(&dir.join("probe"))?, gallery: Dataset::read(&dir.join("gallery"))? })
    }
}

struct Runner {
    dir: PathBuf,
    force: bool,
    records: Vec<StageRecord>,
}

impl Runner {
    /// Loads the stage artifact when its stamp matches `hash`, otherwise computes it.
    fn stage<V>(
        &mut self,
        name: &str,
        hash: &str,
        artifact: &str,
        load: impl FnOnce(&Path) -> Result<V>,
        compute: impl FnOnce(&Path) -> Result<V>,
    ) -> Result<V> {
        let t = Instant::now();
        let path = self.dir.join(artifact);
        let stamp_path = self.dir.join("stages").join(format!("{name}.json"));
        let stamp: Option<Stamp> = if stamp_path.exists() { Some(read_json(&stamp_path).map_err(|e| e.in_stage(name))?) } else { None };
        let reusable = stamp.as_ref().is_some_and(|s| s.config_hash == hash) && path.exists();
        if !reusable && path.exists() && !self.force {
            return Err(Error::StaleCheckpoint { stage: name.into(), path });
        }
        let (value, reused) = if reusable {
            info!("{name}: reusing {}", path.display());
            (load(&path).map_err(|e| e.in_stage(name))?, true)
        } else {
            info!("{name}: computing {}", path.display());
            if path.is_dir() {
                fs::remove_dir_all(&path).map_err(|e| Error::io(format!("clearing {}", path.display()), e).in_stage(name))?;
            }
            let v = compute(&path).map_err(|e| e.in_stage(name))?;
            write_json(&stamp_path, &Stamp { stage: name.into(), config_hash: hash.into(), artifact: artifact.into() }).map_err(|e| e.in_stage(name))?;
            (v, false)
        };
        self.records.push(StageRecord { stage: name.into(), artifact: artifact.into(), config_hash: hash.into(), wall_seconds: t.elapsed().as_secs_f64(), reused });
        Ok(value)
    }
}

/// Writes every dataset of a benchmark under `dir` (`synthetic/`, `real_<m>/`,
/// `probe/`, `gallery/`) plus `benchmark.json` with the illumination catalog.
pub fn write_benchmark(bench: Benchmark, dir: &Path) -> Result<ExperimentData> {
    let (data, info) = ExperimentData::from_benchmark(bench);
    data.write(dir, &info)?;
    Ok(data)
}

/// The illumination catalog stored by [`write_benchmark`].
pub fn read_catalog(dir: &Path) -> Result<Vec<IlluminationSpec>> {
    let info: BenchmarkInfo = read_json(&dir.join("benchmark.json"))?;
    Ok(info.catalog)
}

fn stage_hash<C: Serialize>(stage: &str, config: &C, upstream: &[&str]) -> String {
    hash_json(&(SCHEMA_VERSION, stage, config, upstream))
}

fn seeded(cfg: &TrainConfig, seed: u64, label: &str) -> TrainConfig {
    TrainConfig { seed: derive_seed(seed, label), ..cfg.clone() }
}

fn score(model: &FeatureExtractor<f32>, data: &ExperimentData, seed: u64, metric: Metric) -> Result<RankScores> {
    let split = make_split(model, &data.probe, &data.gallery, derive_seed(seed, "split"))?;
    let curve = cmc(&split, metric)?;
    Ok(RankScores { rank1: curve.rank1(), cmc: curve.accuracies })
}

fn manifest_text(dir: &Path) -> Result<String> {
    let p = dir.join(MANIFEST_FILE);
    fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
}

fn load_json<V: DeserializeOwned>(p: &Path) -> Result<V> {
    read_json(p)
}

/// Runs (or resumes) every stage in `dir`; `force` recomputes stages whose
/// stored configuration no longer matches.
pub fn run_pipeline(config: &ExperimentConfig, dir: &Path, force: bool) -> Result<RunManifest> {
    config.validate()?;
    let _lock = DirLock::acquire(dir)?;
    let seed = config.seed;
    let mut run = Runner { dir: dir.to_path_buf(), force, records: Vec::new() };

    let target_hash = match &config.target {
        Some(t) => Some((manifest_text(&t.probe)?, manifest_text(&t.gallery)?)),
        None => None,
    };
    let h_data = stage_hash("gen-data", &(&config.benchmark, seed, &target_hash), &[]);
    let data = run.stage("gen-data", &h_data, "data", |p| ExperimentData::read(p), |p| {
        let (mut data, mut info) = ExperimentData::from_benchmark(generate_benchmark(&config.benchmark, seed)?);
        if let Some(t) = &config.target {
            data.probe = Dataset::read(&t.probe)?;
            data.gallery = Dataset::read(&t.gallery)?;
            info.target_illumination = None;
            info.target_anchor = None;
        }
        data.write(p, &info)?;
        // read back so fresh and resumed runs see byte-identical inputs
        ExperimentData::read(p)
    })?;

    let h_reid = stage_hash("train-reid", &config.reid, &[&h_data]);
    let joint: FeatureExtractor<f32> = run.stage("train-reid", &h_reid, "reid_joint.json", |p| FeatureExtractor::load(p), |p| {
        let mut sets = data.real_sources.clone();
        sets.push(data.synthetic_merged());
        let (m, rep) = train_joint::<f32>(&sets, &config.reid.arch, &seeded(&config.reid.train, seed, "train-reid"))?;
        info!("train-reid: final train accuracy {:.3}", rep.final_train_accuracy);
        m.save(p)?;
        Ok(m)
    })?;

    let h_illum = stage_hash("train-illum", &config.illum, &[&h_data]);
    let classifier: IlluminationClassifier<f32> = run.stage("train-illum", &h_illum, "illum.json", |p| IlluminationClassifier::load(p), |p| {
        let (c, rep) = train_illum_classifier::<f32>(&data.synthetic, &config.illum.arch, &seeded(&config.illum.train, seed, "train-illum"))?;
        info!("train-illum: held-out accuracy {:.3}", rep.heldout_accuracy);
        for w in &rep.warnings {
            log::warn!("train-illum: {w}");
        }
        c.save(p)?;
        Ok(c)
    })?;

    let h_select = stage_hash("infer-illum", &(), &[&h_illum]);
    let selection: DomainSelection = run.stage("infer-illum", &h_select, "selection.json", load_json, |p| {
        let pool = data.target_pool()?;
        let sel = infer_domain(&classifier, &pool.images())?;
        write_json(p, &sel)?;
        Ok(sel)
    })?;
    let selected_domain = *classifier
        .domain_ids
        .get(selection.k_star)
        .ok_or_else(|| Error::validation(format!("k* = {} outside the classifier's {} domains", selection.k_star, classifier.num_classes())))?;
    let source = data
        .synthetic
        .iter()
        .find(|d| d.domain_ids().contains(&selected_domain))
        .ok_or_else(|| Error::validation(format!("selected domain {selected_domain} missing from the synthetic data")))?;
    info!("infer-illum: k* = {} (domain {selected_domain}), votes {:?}", selection.k_star, selection.vote_counts);

    let tcfg = TranslationConfig { seed: derive_seed(seed, "train-translate"), ..config.translation.clone() };
    let h_translator = stage_hash("train-translate", &tcfg, &[&h_data, &h_select]);
    let translator: TranslationModel<f32> = run.stage("train-translate", &h_translator, "translator.json", |p| TranslationModel::load(p), |p| {
        let pool = data.target_pool()?;
        let (m, rep) = train_translation::<f32>(source, &pool, &tcfg)?;
        info!("train-translate: final masked loss {:.4} (budget {})", rep.final_masked_reg_loss, rep.mask_budget);
        m.save(p)?;
        Ok(m)
    })?;

    let h_translated = stage_hash("translate", &(), &[&h_translator]);
    let translated = run.stage("translate", &h_translated, "translated", |p| Dataset::read(p), |p| {
        let t = translate(&translator, source)?;
        t.write(p)?;
        Ok(t)
    })?;

    let h_tuned = stage_hash("finetune", &config.finetune, &[&h_reid, &h_translated]);
    let tuned: FeatureExtractor<f32> = run.stage("finetune", &h_tuned, "reid_finetuned.json", |p| FeatureExtractor::load(p), |p| {
        let (m, _) = finetune(&joint, &translated, &seeded(&config.finetune, seed, "finetune"))?;
        m.save(p)?;
        Ok(m)
    })?;

    let h_eval = stage_hash("evaluate", &config.metric, &[&h_reid, &h_tuned]);
    let metrics: PipelineMetrics = run.stage("evaluate", &h_eval, "metrics.json", load_json, |p| {
        let m = PipelineMetrics {
            metric: config.metric,
            baseline: score(&joint, &data, seed, config.metric)?,
            adapted: score(&tuned, &data, seed, config.metric)?,
            k_star: selection.k_star,
            selected_domain,
        };
        write_json(p, &m)?;
        Ok(m)
    })?;
    info!("evaluate: rank-1 {:.3} adapted vs {:.3} unadapted", metrics.adapted.rank1, metrics.baseline.rank1);

    let manifest = RunManifest { schema_version: SCHEMA_VERSION, config: config.clone(), config_hash: hash_json(config), stages: run.records, k_star: selection.k_star, metrics };
    write_json(&dir.join(RUN_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
