use std::collections::BTreeSet;
use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_captured, render_person, FrameSize, RealnessGap};
use super::specs::{IdentitySpec, IlluminationSpec};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub identity_id: u32,
    pub domain_id: u32,
    pub origin: Origin,
    /// file name relative to the dataset directory
    pub path: String,
}

/// In-memory dataset; on disk it is a directory with `manifest.json` and one PNG per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    path: String,
    identity_id: u32,
    domain_id: u32,
    origin: Origin,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    name: String,
    height: usize,
    width: usize,
    samples: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, frame: FrameSize) -> Self {
        Dataset { name: name.into(), height: frame.height, width: frame.width, samples: Vec::new() }
    }

    pub fn frame(&self) -> FrameSize {
        FrameSize { height: self.height, width: self.width }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domain_ids(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.domain_id).collect()
    }

    pub fn identity_ids(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.identity_id).collect()
    }

    pub fn images(&self) -> Vec<&ImageTensor> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    /// Samples of one domain, in order.
    pub fn domain(&self, domain_id: u32) -> Dataset {
        Dataset {
            name: format!("{}/domain-{domain_id}", self.name),
            height: self.height,
            width: self.width,
            samples: self.samples.iter().filter(|s| s.domain_id == domain_id).cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths = BTreeSet::new();
        for s in &self.samples {
            if s.image.height() != self.height || s.image.width() != self.width {
                return Err(Error::validation(format!(
                    "dataset {}: sample {} is {}×{}, declared {}×{}",
                    self.name,
                    s.path,
                    s.image.height(),
                    s.image.width(),
                    self.height,
                    self.width
                )));
            }
            if !s.image.in_unit_range() {
                return Err(Error::validation(format!("dataset {}: sample {} has pixels outside [0,1]", self.name, s.path)));
            }
            if s.path.is_empty() || Path::new(&s.path).is_absolute() || s.path.contains("..") {
                return Err(Error::validation(format!("dataset {}: sample path `{}` must be relative", self.name, s.path)));
            }
            if !paths.insert(s.path.as_str()) {
                return Err(Error::validation(format!("dataset {}: duplicate sample path {}", self.name, s.path)));
            }
        }
        Ok(())
    }

    /// Writes images and the manifest; the manifest is renamed into place last.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for s in &self.samples {
            s.image.save_png(&dir.join(&s.path))?;
        }
        let file = ManifestFile {
            name: self.name.clone(),
            height: self.height,
            width: self.width,
            samples: self
                .samples
                .iter()
                .map(|s| ManifestEntry { path: s.path.clone(), identity_id: s.identity_id, domain_id: s.domain_id, origin: s.origin })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json("manifest", e))?;
        crate::util::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let mut samples = Vec::with_capacity(file.samples.len());
        for e in file.samples {
            let image = ImageTensor::load_png(&dir.join(&e.path))?;
            samples.push(Sample { image, identity_id: e.identity_id, domain_id: e.domain_id, origin: e.origin, path: e.path });
        }
        let ds = Dataset { name: file.name, height: file.height, width: file.width, samples };
        ds.validate()?;
        Ok(ds)
    }

    /// Concatenates datasets of equal frame size.
    pub fn merge(name: impl Into<String>, parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::validation("merge of zero datasets"))?;
        let mut out = Dataset { name: name.into(), height: first.height, width: first.width, samples: Vec::new() };
        for (i, p) in parts.iter().enumerate() {
            if p.frame() != first.frame() {
                return Err(Error::validation(format!("cannot merge {} ({}×{}) with {}×{}", p.name, p.height, p.width, first.height, first.width)));
            }
            out.samples.extend(p.samples.iter().cloned().map(|mut s| {
                s.path = format!("p{i}_{}", s.path);
                s
            }));
        }
        Ok(out)
    }
}

/// Pose angle and render seed per sample, identity-major.
fn sample_plan(n_identities: usize, samples_per_identity: usize, rng_seed: u64) -> Vec<(f32, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n_identities * samples_per_identity)
        .map(|_| {
            let pose = rng.random_range(0.0..2.0 * PI);
            (if pose >= 2.0 * PI { 0.0 } else { pose }, rng.random::<u64>())
        })
        .collect()
}

fn check_inputs(identities: &[IdentitySpec], samples_per_identity: usize) -> Result<()> {
    if identities.is_empty() {
        return Err(Error::validation("identity list is empty"));
    }
    if samples_per_identity == 0 {
        return Err(Error::validation("samples_per_identity must be ≥ 1"));
    }
    let ids: BTreeSet<u32> = identities.iter().map(|i| i.identity_id).collect();
    if ids.len() != identities.len() {
        return Err(Error::validation("identity ids must be unique"));
    }
    Ok(())
}

/// Clean synthetic renders of every identity under one illumination.
///
/// Images are quantized to the 8-bit grid so the dataset survives a disk round trip unchanged.
pub fn generate_domain(identities: &[IdentitySpec], illum: &IlluminationSpec, samples_per_identity: usize, rng_seed: u64, frame: FrameSize) -> Result<Dataset> {
    check_inputs(identities, samples_per_identity)?;
    let plan = sample_plan(identities.len(), samples_per_identity, rng_seed);
    let mut ds = Dataset::new(format!("synthetic-illum-{}", illum.illum_id), frame);
    for (i, id) in identities.iter().enumerate() {
        for k in 0..samples_per_identity {
            let (pose, seed) = plan[i * samples_per_identity + k];
            let image = render_person(id, illum, pose, seed, frame)?.quantized();
            ds.samples.push(Sample {
                image,
                identity_id: id.identity_id,
                domain_id: illum.illum_id,
                origin: Origin::Synthetic,
                path: format!("d{}_id{}_{k}.png", illum.illum_id, id.identity_id),
            });
        }
    }
    Ok(ds)
}

/// Captured-looking frames under an illumination absent from `training_catalog`.
pub fn generate_target_domain(
    identities: &[IdentitySpec],
    illum: &IlluminationSpec,
    samples_per_identity: usize,
    gap: &RealnessGap,
    rng_seed: u64,
    frame: FrameSize,
    training_catalog: &[IlluminationSpec],
) -> Result<Dataset> {
    check_inputs(identities, samples_per_identity)?;
    gap.validate()?;
    if let Some(hit) = training_catalog.iter().find(|c| c.illum_id == illum.illum_id || c.same_parameters(illum)) {
        return Err(Error::validation(format!(
            "target illumination {} collides with training catalog entry {}; target conditions must be held out",
            illum.illum_id, hit.illum_id
        )));
    }
    let plan = sample_plan(identities.len(), samples_per_identity, rng_seed);
    let mut ds = Dataset::new(format!("target-illum-{}", illum.illum_id), frame);
    for (i, id) in identities.iter().enumerate() {
        for k in 0..samples_per_identity {
            let (pose, seed) = plan[i * samples_per_identity + k];
            let image = render_captured(id, illum, pose, seed, frame, gap)?.quantized();
            ds.samples.push(Sample {
                image,
                identity_id: id.identity_id,
                domain_id: illum.illum_id,
                origin: Origin::Real,
                path: format!("d{}_id{}_{k}.png", illum.illum_id, id.identity_id),
            });
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::specs::{sample_identities, sample_illumination_catalog};

    fn fixtures() -> (Vec<IdentitySpec>, Vec<IlluminationSpec>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        (sample_identities(3, 0, &mut rng).unwrap(), sample_illumination_catalog(3, &mut rng).unwrap())
    }

    #[test]
    fn domain_size_is_identities_times_samples() {
        let (ids, cat) = fixtures();
        let ds = generate_domain(&ids, &cat[1], 4, 0, FrameSize::TOY).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.domain_ids(), BTreeSet::from([1]));
        assert!(ds.samples.iter().all(|s| s.origin == Origin::Synthetic));
        let single = generate_domain(&ids[..1], &cat[0], 1, 0, FrameSize::TOY).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn empty_identity_list_is_rejected() {
        let (_, cat) = fixtures();
        assert!(matches!(generate_domain(&[], &cat[0], 4, 0, FrameSize::TOY), Err(Error::Validation(_))));
    }

    #[test]
    fn held_out_check_rejects_catalog_illuminations() {
        let (ids, cat) = fixtures();
        let err = generate_target_domain(&ids, &cat[2], 1, &RealnessGap::default(), 0, FrameSize::TOY, &cat).unwrap_err();
        assert!(err.to_string().contains("held out"));
        let mut renamed = cat[2].clone();
        renamed.illum_id = 99;
        assert!(generate_target_domain(&ids, &renamed, 1, &RealnessGap::default(), 0, FrameSize::TOY, &cat).is_err());
    }

    #[test]
    fn zero_gap_target_equals_clean_domain() {
        let (ids, cat) = fixtures();
        let clean = generate_domain(&ids, &cat[0], 2, 5, FrameSize::TOY).unwrap();
        let target = generate_target_domain(&ids, &cat[0], 2, &RealnessGap::none(), 5, FrameSize::TOY, &[]).unwrap();
        for (a, b) in clean.samples.iter().zip(&target.samples) {
            assert_eq!(a.image, b.image);
        }
        assert!(target.samples.iter().all(|s| s.origin == Origin::Real));
    }

    #[test]
    fn manifest_round_trip_is_structurally_equal() {
        let (ids, cat) = fixtures();
        let ds = generate_target_domain(&ids, &cat[0], 2, &RealnessGap::default(), 5, FrameSize::TOY, &cat[1..]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);

        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: BTreeSet<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, BTreeSet::from(["name".into(), "height".into(), "width".into(), "samples".into()]));
        let entry: BTreeSet<_> = v["samples"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(entry, BTreeSet::from(["path".into(), "identity_id".into(), "domain_id".into(), "origin".into()]));
        assert_eq!(v["samples"][0]["origin"], "real");
    }
}
