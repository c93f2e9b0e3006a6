//! Identity-classification feature extractor: joint training over merged
//! domains, embedding extraction, and fine-tuning on translated data.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{Net, NetBuilder};
use crate::scalar::Scalar;
use crate::synth_data::Dataset;
use crate::train::{embed, fit_classifier, predict, FitReport, LabeledSet};
use crate::util::{derive_seed, read_json, write_json};

pub use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReidArch {
    pub height: usize,
    pub width: usize,
    pub embed_dim: usize,
    /// output channels of the conv blocks; every block after the first halves the resolution
    pub conv_widths: Vec<usize>,
}

impl Default for ReidArch {
    fn default() -> Self {
        ReidArch { height: 64, width: 32, embed_dim: 64, conv_widths: vec![16, 32, 48, 64] }
    }
}

impl ReidArch {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::validation("embed_dim must be ≥ 1"));
        }
        if self.conv_widths.len() < 2 || self.conv_widths.contains(&0) {
            return Err(Error::validation("conv_widths needs at least two non-zero entries"));
        }
        let down = 1usize << (self.conv_widths.len() - 1);
        if self.height < down || self.width < down {
            return Err(Error::validation(format!("{}×{} input too small for {} downsampling blocks", self.height, self.width, self.conv_widths.len() - 1)));
        }
        Ok(())
    }

    fn backbone<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Net<T> {
        let w = &self.conv_widths;
        let mut b = NetBuilder::new().conv(3, w[0], 3, 1, 1).relu();
        for pair in w.windows(2) {
            b = b.conv(pair[0], pair[1], 3, 2, 1).relu();
        }
        b.global_avg_pool().linear(*w.last().unwrap(), self.embed_dim).build(rng)
    }

    fn head<T: Scalar>(&self, classes: usize, rng: &mut ChaCha8Rng) -> Net<T> {
        NetBuilder::new().linear(self.embed_dim, classes).build(rng)
    }
}

/// One class of the contiguous training label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub class: usize,
    /// index of the dataset in the training list
    pub source: usize,
    pub dataset: String,
    pub identity_id: u32,
}

/// Re-identification network: conv stack + embedding (the extractor) and a
/// linear identity classifier used only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    pub arch: ReidArch,
    pub backbone: Net<T>,
    pub head: Net<T>,
    pub label_map: Vec<LabelEntry>,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidTrainReport {
    pub fit: FitReport,
    /// accuracy of the final model on its training images
    pub final_train_accuracy: f64,
    pub num_classes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    kind: String,
    version: u32,
    arch: ReidArch,
    num_classes: usize,
    label_map: Vec<LabelEntry>,
    backbone: Vec<f64>,
    head: Vec<f64>,
}

const CHECKPOINT_KIND: &str = "reid-feature-extractor";

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(arch: ReidArch, num_classes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if num_classes < 2 {
            return Err(Error::validation(format!("need at least 2 identities to train, got {num_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "reid-init"));
        let backbone = arch.backbone(&mut rng);
        let head = arch.head(num_classes, &mut rng);
        Ok(FeatureExtractor { arch, backbone, head, label_map: Vec::new(), version: CHECKPOINT_VERSION })
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.head.params.len() / (self.arch.embed_dim + 1)
    }

    /// D-dimensional embeddings; the classifier head is not applied.
    pub fn extract_features(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<T>>> {
        for (i, img) in images.iter().enumerate() {
            if img.height() != self.arch.height || img.width() != self.arch.width {
                return Err(Error::validation(format!(
                    "image {i} is {}×{}, model expects {}×{}",
                    img.height(),
                    img.width(),
                    self.arch.height,
                    self.arch.width
                )));
            }
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let feats = embed(&self.backbone, images);
        if feats.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(feats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            version: self.version,
            arch: self.arch.clone(),
            num_classes: self.num_classes(),
            label_map: self.label_map.clone(),
            backbone: self.backbone.params.iter().map(|p| p.as_f64()).collect(),
            head: self.head.params.iter().map(|p| p.as_f64()).collect(),
        };
        write_json(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = read_json(path)?;
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::validation(format!("{} holds a `{}` checkpoint, not {CHECKPOINT_KIND}", path.display(), ckpt.kind)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let mut model = Self::new(ckpt.arch, ckpt.num_classes, 0)?;
        if ckpt.backbone.len() != model.backbone.params.len() || ckpt.head.len() != model.head.params.len() {
            return Err(Error::validation(format!("{}: parameter count does not match architecture", path.display())));
        }
        model.backbone.params = ckpt.backbone.into_iter().map(T::lit).collect();
        model.head.params = ckpt.head.into_iter().map(T::lit).collect();
        model.label_map = ckpt.label_map;
        Ok(model)
    }
}

/// Samples from every dataset with their contiguous class labels, in a canonical
/// order that does not depend on the order samples were listed in.
fn labeled_samples<'a>(datasets: &'a [Dataset]) -> (Vec<(&'a ImageTensor, usize)>, Vec<LabelEntry>) {
    let mut classes: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for (src, ds) in datasets.iter().enumerate() {
        for id in ds.identity_ids() {
            classes.insert((src, id), 0);
        }
    }
    let mut label_map = Vec::with_capacity(classes.len());
    for (class, ((src, id), slot)) in classes.iter_mut().enumerate() {
        *slot = class;
        label_map.push(LabelEntry { class, source: *src, dataset: datasets[*src].name.clone(), identity_id: *id });
    }
    let mut keyed: Vec<(usize, u32, u32, &str, &ImageTensor)> = Vec::new();
    for (src, ds) in datasets.iter().enumerate() {
        for s in &ds.samples {
            keyed.push((src, s.identity_id, s.domain_id, s.path.as_str(), &s.image));
        }
    }
    keyed.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    let samples = keyed.into_iter().map(|(src, id, _, _, img)| (img, classes[&(src, id)])).collect();
    (samples, label_map)
}

fn check_frames(datasets: &[Dataset], arch: &ReidArch) -> Result<()> {
    for ds in datasets {
        if ds.height != arch.height || ds.width != arch.width {
            return Err(Error::validation(format!("dataset {} is {}×{}, model expects {}×{}", ds.name, ds.height, ds.width, arch.height, arch.width)));
        }
    }
    Ok(())
}

fn train_on<T: Scalar>(model: &mut FeatureExtractor<T>, samples: &[(&ImageTensor, usize)], config: &TrainConfig, stage: &str) -> Result<ReidTrainReport> {
    let images: Vec<&ImageTensor> = samples.iter().map(|(i, _)| *i).collect();
    let set = LabeledSet::<T>::new(&images, samples.iter().map(|(_, l)| *l).collect());
    let fit = fit_classifier(&mut model.backbone, &mut model.head, &set, config, stage)?;
    let preds = predict(&model.backbone, &model.head, &set);
    let hits = preds.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    let final_train_accuracy = hits as f64 / set.len().max(1) as f64;
    info!("{stage}: {} classes, final train accuracy {final_train_accuracy:.3}", model.num_classes());
    Ok(ReidTrainReport { fit, final_train_accuracy, num_classes: model.num_classes() })
}

/// Trains Φ from scratch as one identity classifier over all datasets merged.
///
/// Identity ids are namespaced per dataset and remapped to one contiguous
/// class range; the mapping is kept in the returned model.
pub fn train_joint<T: Scalar>(datasets: &[Dataset], arch: &ReidArch, config: &TrainConfig) -> Result<(FeatureExtractor<T>, ReidTrainReport)> {
    config.validate()?;
    if config.epochs == 0 {
        return Err(Error::validation("joint training needs epochs ≥ 1"));
    }
    check_frames(datasets, arch)?;
    let (samples, label_map) = labeled_samples(datasets);
    let mut model = FeatureExtractor::new(arch.clone(), label_map.len(), config.seed)?;
    model.label_map = label_map;
    let report = train_on(&mut model, &samples, config, "train-reid")?;
    Ok((model, report))
}

/// Warm-starts from `model` with a fresh classifier head for `translated`'s identities.
pub fn finetune<T: Scalar>(model: &FeatureExtractor<T>, translated: &Dataset, config: &TrainConfig) -> Result<(FeatureExtractor<T>, ReidTrainReport)> {
    config.validate()?;
    check_frames(std::slice::from_ref(translated), &model.arch)?;
    let (samples, label_map) = labeled_samples(std::slice::from_ref(translated));
    let fresh = FeatureExtractor::<T>::new(model.arch.clone(), label_map.len(), derive_seed(config.seed, "finetune-head"))?;
    let mut tuned = FeatureExtractor { arch: model.arch.clone(), backbone: model.backbone.clone(), head: fresh.head, label_map, version: CHECKPOINT_VERSION };
    if config.epochs == 0 {
        let fit = FitReport { loss_per_epoch: vec![], accuracy_per_epoch: vec![] };
        let num_classes = tuned.num_classes();
        return Ok((tuned, ReidTrainReport { fit, final_train_accuracy: f64::NAN, num_classes }));
    }
    let report = train_on(&mut tuned, &samples, config, "finetune")?;
    Ok((tuned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{generate_domain, sample_identities, sample_illumination_catalog, FrameSize};

    fn tiny_arch() -> ReidArch {
        ReidArch { height: 16, width: 16, embed_dim: 8, conv_widths: vec![4, 8] }
    }

    fn tiny_sets() -> Vec<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = FrameSize { height: 16, width: 16 };
        let cat = sample_illumination_catalog(2, &mut rng).unwrap();
        let a = sample_identities(3, 0, &mut rng).unwrap();
        let b = sample_identities(2, 0, &mut rng).unwrap();
        vec![generate_domain(&a, &cat[0], 2, 1, frame).unwrap(), generate_domain(&b, &cat[1], 2, 2, frame).unwrap()]
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences_on_micro_network() {
        use crate::nn::{softmax_cross_entropy, Tensor};
        // 1 input feature -> 2 classes: two weights and two biases
        let net = NetBuilder::new().linear(1, 2).build::<f64, _>(&mut ChaCha8Rng::seed_from_u64(12));
        assert_eq!(net.param_count(), 4);
        let x = Tensor::from_vec(1, 3, 1, 1, vec![0.7, -1.3, 0.4]);
        let labels = [0usize, 1, 1];
        let loss_of = |n: &Net<f64>| softmax_cross_entropy(&n.infer(&x), &labels).0;
        let (logits, tape) = net.forward(&x);
        let (_, dlogits, _) = softmax_cross_entropy(&logits, &labels);
        let mut grads = net.zero_grads();
        net.backward(&tape, dlogits, &mut grads);
        let h = 1e-3;
        for i in 0..4 {
            let mut p = net.clone();
            p.params[i] += h;
            let mut m = net.clone();
            m.params[i] -= h;
            let fd = (loss_of(&p) - loss_of(&m)) / (2.0 * h);
            let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-12);
            assert!(rel <= 1e-3, "param {i}: fd {fd}, analytic {}, rel {rel}", grads[i]);
        }
    }

    #[test]
    fn label_spaces_are_namespaced_per_dataset() {
        let sets = tiny_sets();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::new(1) };
        let (model, report) = train_joint::<f32>(&sets, &tiny_arch(), &cfg).unwrap();
        // both datasets use identity ids starting at 0
        assert_eq!(model.num_classes(), 5);
        assert_eq!(report.num_classes, 5);
        assert_eq!(model.label_map.len(), 5);
        assert_eq!(model.label_map.iter().filter(|e| e.source == 1).count(), 2);
    }

    #[test]
    fn single_identity_is_rejected() {
        let sets = tiny_sets();
        let mut one = sets[0].clone();
        one.samples.retain(|s| s.identity_id == 0);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::new(1) };
        assert!(matches!(train_joint::<f32>(&[one], &tiny_arch(), &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn extraction_shapes_and_errors() {
        let sets = tiny_sets();
        let model = FeatureExtractor::<f32>::new(tiny_arch(), 5, 0).unwrap();
        let img = &sets[0].samples[0].image;
        let feats = model.extract_features(&[img, img]).unwrap();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[0].len(), 8);
        assert_eq!(feats[0], feats[1]);
        let wrong = ImageTensor::new(8, 16);
        assert!(model.extract_features(&[&wrong]).is_err());
    }

    #[test]
    fn zero_epoch_finetune_keeps_the_extractor() {
        let sets = tiny_sets();
        let model = FeatureExtractor::<f32>::new(tiny_arch(), 5, 0).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::new(4) };
        let (tuned, _) = finetune(&model, &sets[1], &cfg).unwrap();
        assert_eq!(tuned.backbone.params, model.backbone.params);
        assert_eq!(tuned.num_classes(), 2);
        assert_eq!(tuned.embed_dim(), model.embed_dim());
    }

    #[test]
    fn finetune_leaves_input_untouched_and_keeps_dimension() {
        let sets = tiny_sets();
        let model = FeatureExtractor::<f32>::new(tiny_arch(), 5, 0).unwrap();
        let before = model.clone();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::new(4) };
        let (tuned, _) = finetune(&model, &sets[1], &cfg).unwrap();
        assert_eq!(model, before);
        assert_ne!(tuned.backbone.params, model.backbone.params);
        assert_eq!(tuned.extract_features(&[&sets[1].samples[0].image]).unwrap()[0].len(), 8);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let sets = tiny_sets();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::new(2) };
        let (model, _) = train_joint::<f32>(&sets, &tiny_arch(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reid.json");
        model.save(&path).unwrap();
        let back = FeatureExtractor::<f32>::load(&path).unwrap();
        assert_eq!(back, model);
        let imgs = sets[0].images();
        assert_eq!(back.extract_features(&imgs).unwrap(), model.extract_features(&imgs).unwrap());
    }

    #[test]
    fn permuted_sample_order_gives_identical_training() {
        let sets = tiny_sets();
        let mut shuffled = sets.clone();
        shuffled[0].samples.reverse();
        shuffled[1].samples.swap(0, 3);
        let cfg = TrainConfig { epochs: 3, batch_size: 3, ..TrainConfig::new(9) };
        let (_, a) = train_joint::<f32>(&sets, &tiny_arch(), &cfg).unwrap();
        let (_, b) = train_joint::<f32>(&shuffled, &tiny_arch(), &cfg).unwrap();
        assert_eq!(a.fit.loss_per_epoch, b.fit.loss_per_epoch);
    }
}
