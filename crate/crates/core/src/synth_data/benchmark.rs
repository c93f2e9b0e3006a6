//! The toy adaptation benchmark: a synthetic catalog, a few labeled "real"
//! source cameras, and an unseen target camera split into probe and gallery.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{generate_domain, generate_target_domain, Dataset};
use super::render::{FrameSize, RealnessGap};
use super::specs::{held_out_near, sample_identities, sample_illumination_catalog, IdentitySpec, IlluminationSpec};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Identity id offsets keep the three populations disjoint.
pub const REAL_ID_BASE: u32 = 10_000;
pub const TEST_ID_BASE: u32 = 20_000;
/// Illumination ids of real cameras start here, after any plausible catalog.
pub const REAL_ILLUM_BASE: u32 = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub identities: usize,
    pub illuminations: usize,
    pub samples_per_identity: usize,
    pub real_domains: usize,
    pub real_identities: usize,
    pub real_samples_per_identity: usize,
    pub test_identities: usize,
    /// images per test identity in each of the probe and gallery cameras
    pub test_samples_per_camera: usize,
    /// catalog entry the target illumination is drawn near; `None` picks one from the seed
    pub target_anchor: Option<usize>,
    /// perturbation of the target around its anchor, relative to catalog spacing
    pub target_spread: f32,
    pub gap: RealnessGap,
    pub height: usize,
    pub width: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            identities: 20,
            illuminations: 12,
            samples_per_identity: 4,
            real_domains: 2,
            real_identities: 20,
            real_samples_per_identity: 4,
            test_identities: 100,
            test_samples_per_camera: 2,
            target_anchor: None,
            target_spread: 0.5,
            gap: RealnessGap::default(),
            height: 64,
            width: 32,
        }
    }
}

impl BenchmarkConfig {
    pub fn frame(&self) -> FrameSize {
        FrameSize { height: self.height, width: self.width }
    }

    pub fn validate(&self) -> Result<()> {
        self.frame().validate()?;
        self.gap.validate()?;
        for (name, v) in [
            ("identities", self.identities),
            ("illuminations", self.illuminations),
            ("samples_per_identity", self.samples_per_identity),
            ("test_identities", self.test_identities),
            ("test_samples_per_camera", self.test_samples_per_camera),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("benchmark.{name} must be ≥ 1")));
            }
        }
        if self.illuminations < 2 {
            return Err(Error::validation("benchmark.illuminations must be ≥ 2"));
        }
        if self.real_domains > 0 && (self.real_identities == 0 || self.real_samples_per_identity == 0) {
            return Err(Error::validation("benchmark.real_identities and real_samples_per_identity must be ≥ 1 when real_domains > 0"));
        }
        if let Some(a) = self.target_anchor {
            if a >= self.illuminations {
                return Err(Error::validation(format!("benchmark.target_anchor = {a} outside the {} illuminations", self.illuminations)));
            }
        }
        if !(self.target_spread > 0.0 && self.target_spread.is_finite()) {
            return Err(Error::validation("benchmark.target_spread must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub catalog: Vec<IlluminationSpec>,
    /// one dataset per catalog illumination, domain id = catalog index
    pub synthetic: Vec<Dataset>,
    /// labeled source cameras with the realness gap
    pub real_sources: Vec<Dataset>,
    pub target_illumination: IlluminationSpec,
    /// catalog entry nearest to the target illumination
    pub target_anchor: usize,
    pub probe: Dataset,
    pub gallery: Dataset,
    pub synthetic_identities: Vec<IdentitySpec>,
    pub test_identities: Vec<IdentitySpec>,
}

impl Benchmark {
    /// Unlabeled target images: probe and gallery frames together.
    pub fn target_pool(&self) -> Result<Dataset> {
        Dataset::merge(format!("target-pool-{}", self.target_illumination.illum_id), &[self.probe.clone(), self.gallery.clone()])
    }
}

/// Generates every dataset of the benchmark from one seed.
pub fn generate_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<Benchmark> {
    config.validate()?;
    let frame = config.frame();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "benchmark-specs"));
    // real cameras are sampled jointly with the catalog so they stay well separated from it
    let mut illums = sample_illumination_catalog(config.illuminations + config.real_domains, &mut rng)?;
    let real_illums: Vec<IlluminationSpec> = illums
        .split_off(config.illuminations)
        .into_iter()
        .enumerate()
        .map(|(m, mut s)| {
            s.illum_id = REAL_ILLUM_BASE + m as u32;
            s
        })
        .collect();
    let catalog = illums;
    let synthetic_identities = sample_identities(config.identities, 0, &mut rng)?;
    let test_identities = sample_identities(config.test_identities, TEST_ID_BASE, &mut rng)?;
    let anchor = config.target_anchor.unwrap_or_else(|| (derive_seed(seed, "target-anchor") % config.illuminations as u64) as usize);
    let target_id = REAL_ILLUM_BASE + config.real_domains as u32;
    let target_illumination = held_out_near(&catalog, anchor, target_id, config.target_spread, &mut rng)?;

    let mut synthetic = Vec::with_capacity(catalog.len());
    for illum in &catalog {
        let s = derive_seed(seed, &format!("synthetic-{}", illum.illum_id));
        synthetic.push(generate_domain(&synthetic_identities, illum, config.samples_per_identity, s, frame)?);
    }
    let mut real_sources = Vec::with_capacity(real_illums.len());
    for (m, illum) in real_illums.iter().enumerate() {
        let first = REAL_ID_BASE + (m * config.real_identities) as u32;
        let ids = sample_identities(config.real_identities, first, &mut rng)?;
        let s = derive_seed(seed, &format!("real-{m}"));
        let mut ds = generate_target_domain(&ids, illum, config.real_samples_per_identity, &config.gap, s, frame, &catalog)?;
        ds.name = format!("real-source-{m}");
        real_sources.push(ds);
    }
    let mut cameras = ["probe", "gallery"].into_iter().map(|cam| {
        let s = derive_seed(seed, &format!("target-{cam}"));
        generate_target_domain(&test_identities, &target_illumination, config.test_samples_per_camera, &config.gap, s, frame, &catalog).map(|mut ds| {
            ds.name = format!("target-{cam}");
            for smp in &mut ds.samples {
                smp.path = format!("{cam}_{}", smp.path);
            }
            ds
        })
    });
    let probe = cameras.next().expect("two cameras")?;
    let gallery = cameras.next().expect("two cameras")?;
    Ok(Benchmark { catalog, synthetic, real_sources, target_illumination, target_anchor: anchor, probe, gallery, synthetic_identities, test_identities })
}
