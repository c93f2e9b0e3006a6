//! Illumination classifier and closest-domain selection by vote counting.

use std::collections::BTreeSet;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{Net, NetBuilder};
use crate::scalar::Scalar;
use crate::synth_data::Dataset;
use crate::train::{fit_classifier, predict, FitReport, LabeledSet, TrainConfig};
use crate::util::{derive_seed, read_json, write_json};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_KIND: &str = "illumination-classifier";

/// Share of each domain's samples held out for the accuracy report.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// A held-out class pair whose mutual confusion reaches this share is flagged as degenerate.
pub const DEGENERATE_CONFUSION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IllumArch {
    pub height: usize,
    pub width: usize,
    pub conv_widths: Vec<usize>,
}

impl Default for IllumArch {
    fn default() -> Self {
        IllumArch { height: 64, width: 32, conv_widths: vec![8, 16, 32] }
    }
}

impl IllumArch {
    fn nets<T: Scalar>(&self, classes: usize, seed: u64) -> Result<(Net<T>, Net<T>)> {
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(Error::validation("illumination conv_widths must be non-empty and non-zero"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "illum-init"));
        let mut b = NetBuilder::new();
        let mut prev = 3;
        for &w in &self.conv_widths {
            b = b.conv(prev, w, 3, 2, 1).relu();
            prev = w;
        }
        let backbone = b.global_avg_pool().build(&mut rng);
        let head = NetBuilder::new().linear(prev, classes).build(&mut rng);
        Ok((backbone, head))
    }
}

/// N-way classifier predicting which synthetic illumination rendered an image.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationClassifier<T> {
    pub arch: IllumArch,
    /// class k predicts synthetic domain `domain_ids[k]`
    pub domain_ids: Vec<u32>,
    backbone: Net<T>,
    head: Net<T>,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllumTrainReport {
    pub fit: FitReport,
    pub heldout_accuracy: f64,
    pub heldout_images: usize,
    /// row = true class, column = predicted class, on the held-out images
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Outcome of the vote: `k_star` is a class index into the classifier's domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSelection {
    pub k_star: usize,
    pub vote_counts: Vec<usize>,
    pub n_images: usize,
}

impl<T: Scalar> IlluminationClassifier<T> {
    pub fn num_classes(&self) -> usize {
        self.domain_ids.len()
    }

    /// Class scores, one N-vector per image.
    pub fn scores(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<T>>> {
        self.check_images(images)?;
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let feats = crate::train::embed(&self.backbone, images);
        Ok(feats
            .into_iter()
            .map(|f| {
                let x = crate::nn::Tensor::from_vec(f.len(), 1, 1, 1, f);
                self.head.infer(&x).data
            })
            .collect())
    }

    /// Predicted class per image; ties go to the smaller class index.
    pub fn predict(&self, images: &[&ImageTensor]) -> Result<Vec<usize>> {
        self.check_images(images)?;
        let set = LabeledSet::<T>::new(images, vec![0; images.len()]);
        Ok(predict(&self.backbone, &self.head, &set))
    }

    fn check_images(&self, images: &[&ImageTensor]) -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            if img.height() != self.arch.height || img.width() != self.arch.width {
                return Err(Error::validation(format!("image {i} is {}×{}, classifier expects {}×{}", img.height(), img.width(), self.arch.height, self.arch.width)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &Checkpoint {
                kind: CHECKPOINT_KIND.into(),
                version: self.version,
                arch: self.arch.clone(),
                domain_ids: self.domain_ids.clone(),
                backbone: self.backbone.params.iter().map(|p| p.as_f64()).collect(),
                head: self.head.params.iter().map(|p| p.as_f64()).collect(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = read_json(path)?;
        if ckpt.kind != CHECKPOINT_KIND || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("{}: not a v{CHECKPOINT_VERSION} {CHECKPOINT_KIND} checkpoint", path.display())));
        }
        let (mut backbone, mut head) = ckpt.arch.nets::<T>(ckpt.domain_ids.len(), 0)?;
        if backbone.params.len() != ckpt.backbone.len() || head.params.len() != ckpt.head.len() {
            return Err(Error::validation(format!("{}: parameter count does not match architecture", path.display())));
        }
        backbone.params = ckpt.backbone.into_iter().map(T::lit).collect();
        head.params = ckpt.head.into_iter().map(T::lit).collect();
        Ok(IlluminationClassifier { arch: ckpt.arch, domain_ids: ckpt.domain_ids, backbone, head, version: ckpt.version })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    kind: String,
    version: u32,
    arch: IllumArch,
    domain_ids: Vec<u32>,
    backbone: Vec<f64>,
    head: Vec<f64>,
}

/// Trains on whole synthetic crops (background included) labeled by domain id.
///
/// Every distinct domain id across `synthetic` becomes one class, in ascending id order.
pub fn train_illum_classifier<T: Scalar>(synthetic: &[Dataset], arch: &IllumArch, config: &TrainConfig) -> Result<(IlluminationClassifier<T>, IllumTrainReport)> {
    config.validate()?;
    let domain_ids: Vec<u32> = synthetic.iter().flat_map(|d| d.domain_ids()).collect::<BTreeSet<_>>().into_iter().collect();
    if domain_ids.len() < 2 {
        return Err(Error::validation(format!("illumination classifier needs at least 2 domains, got {}", domain_ids.len())));
    }
    for ds in synthetic {
        if ds.height != arch.height || ds.width != arch.width {
            return Err(Error::validation(format!("dataset {} is {}×{}, classifier expects {}×{}", ds.name, ds.height, ds.width, arch.height, arch.width)));
        }
    }

    // canonical order, then a seeded per-domain holdout split
    let mut samples: Vec<(u32, &str, &ImageTensor)> = synthetic.iter().flat_map(|d| d.samples.iter().map(|s| (s.domain_id, s.path.as_str(), &s.image))).collect();
    samples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "illum-holdout"));
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (k, &dom) in domain_ids.iter().enumerate() {
        let mut of_domain: Vec<&ImageTensor> = samples.iter().filter(|s| s.0 == dom).map(|s| s.2).collect();
        of_domain.shuffle(&mut rng);
        let n_hold = ((of_domain.len() as f64 * HOLDOUT_FRACTION).round() as usize).min(of_domain.len().saturating_sub(1));
        for (i, img) in of_domain.into_iter().enumerate() {
            if i < n_hold {
                held.push((img, k));
            } else {
                train.push((img, k));
            }
        }
    }

    let (mut backbone, mut head) = arch.nets::<T>(domain_ids.len(), config.seed)?;
    let train_set = LabeledSet::<T>::new(&train.iter().map(|t| t.0).collect::<Vec<_>>(), train.iter().map(|t| t.1).collect());
    let fit = fit_classifier(&mut backbone, &mut head, &train_set, config, "train-illum")?;

    let n = domain_ids.len();
    let mut confusion = vec![vec![0usize; n]; n];
    let held_set = LabeledSet::<T>::new(&held.iter().map(|t| t.0).collect::<Vec<_>>(), held.iter().map(|t| t.1).collect());
    let preds = if held.is_empty() { Vec::new() } else { predict(&backbone, &head, &held_set) };
    for (p, (_, truth)) in preds.iter().zip(&held) {
        confusion[*truth][*p] += 1;
    }
    let hits: usize = (0..n).map(|k| confusion[k][k]).sum();
    let heldout_accuracy = if held.is_empty() { f64::NAN } else { hits as f64 / held.len() as f64 };
    let warnings = degenerate_pairs(&confusion, &domain_ids);
    for w in &warnings {
        warn!("{w}");
    }
    info!("train-illum: {n} domains, held-out accuracy {heldout_accuracy:.3}");
    let model = IlluminationClassifier { arch: arch.clone(), domain_ids, backbone, head, version: CHECKPOINT_VERSION };
    Ok((model, IllumTrainReport { fit, heldout_accuracy, heldout_images: held.len(), confusion, warnings }))
}

fn degenerate_pairs(confusion: &[Vec<usize>], domain_ids: &[u32]) -> Vec<String> {
    let n = confusion.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let total = confusion[i].iter().sum::<usize>() + confusion[j].iter().sum::<usize>();
            if total == 0 {
                continue;
            }
            let crossed = confusion[i][j] + confusion[j][i];
            if crossed as f64 / total as f64 >= DEGENERATE_CONFUSION {
                out.push(format!(
                    "degenerate domains: {} and {} are confused on {crossed}/{total} held-out images; their illuminations may be indistinguishable",
                    domain_ids[i], domain_ids[j]
                ));
            }
        }
    }
    out
}

/// Counts per-class votes and takes the argmax; ties go to the smallest class index.
pub fn vote(predictions: &[usize], num_classes: usize) -> Result<DomainSelection> {
    if predictions.is_empty() {
        return Err(Error::validation("domain inference needs at least one target image"));
    }
    let mut vote_counts = vec![0usize; num_classes];
    for &p in predictions {
        if p >= num_classes {
            return Err(Error::validation(format!("prediction {p} outside {num_classes} classes")));
        }
        vote_counts[p] += 1;
    }
    let mut k_star = 0;
    for (k, &c) in vote_counts.iter().enumerate() {
        if c > vote_counts[k_star] {
            k_star = k;
        }
    }
    Ok(DomainSelection { k_star, vote_counts, n_images: predictions.len() })
}

/// Selects the synthetic domain whose class receives the most per-image votes.
pub fn infer_domain<T: Scalar>(classifier: &IlluminationClassifier<T>, target_images: &[&ImageTensor]) -> Result<DomainSelection> {
    if target_images.is_empty() {
        return Err(Error::validation("domain inference needs at least one target image"));
    }
    let preds = classifier.predict(target_images)?;
    vote(&preds, classifier.num_classes())
}
