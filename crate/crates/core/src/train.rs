//! Supervised classifier fitting shared by the identity and illumination models.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{argmax_columns, softmax_cross_entropy, Net, Sgd, Tensor};
use crate::scalar::Scalar;

/// Optimizer settings for classifier training.
///
/// SGD with momentum 0.9; the learning rate drops ×0.1 once two thirds of the epochs have run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// overridden with a derived seed when run inside a pipeline
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(seed: u64) -> Self {
        TrainConfig { learning_rate: 0.01, epochs: 20, batch_size: 32, seed, weight_decay: 5e-4 }
    }

    /// `epochs = 0` is accepted here (fine-tuning treats it as a no-op).
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!("learning_rate = {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be ≥ 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation(format!("weight_decay = {} must be ≥ 0", self.weight_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs >= 3 && epoch >= 2 * self.epochs / 3 {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }
}

/// Images as `[3,h,w]` planes in [-1,1] with class labels.
pub(crate) struct LabeledSet<T> {
    pub planar: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(images: &[&ImageTensor], labels: Vec<usize>) -> Self {
        assert_eq!(images.len(), labels.len());
        let (height, width) = images.first().map(|i| (i.height(), i.width())).unwrap_or((0, 0));
        LabeledSet { planar: images.iter().map(|i| Tensor::planar_from_image(i)).collect(), labels, height, width }
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let refs: Vec<&[T]> = idx.iter().map(|&i| self.planar[i].as_slice()).collect();
        (Tensor::from_planar(&refs, self.height, self.width), idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_per_epoch: Vec<f64>,
    pub accuracy_per_epoch: Vec<f64>,
}

/// Minimizes softmax cross-entropy of `head(backbone(x))`.
pub(crate) fn fit_classifier<T: Scalar>(backbone: &mut Net<T>, head: &mut Net<T>, set: &LabeledSet<T>, config: &TrainConfig, stage: &str) -> Result<FitReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt_b = Sgd::new(backbone.param_count(), config.learning_rate, TrainConfig::MOMENTUM, config.weight_decay);
    let mut opt_h = Sgd::new(head.param_count(), config.learning_rate, TrainConfig::MOMENTUM, config.weight_decay);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut report = FitReport { loss_per_epoch: Vec::new(), accuracy_per_epoch: Vec::new() };
    for epoch in 0..config.epochs {
        opt_b.lr = config.lr_at(epoch);
        opt_h.lr = opt_b.lr;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = set.batch(chunk);
            let (emb, tape_b) = backbone.forward(&x);
            let (logits, tape_h) = head.forward(&emb);
            let (loss, dlogits, hits) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { stage: stage.to_string(), epoch });
            }
            loss_sum += loss.as_f64() * chunk.len() as f64;
            correct += hits;
            let mut g_head = head.zero_grads();
            let demb = head.backward(&tape_h, dlogits, &mut g_head);
            let mut g_back = backbone.zero_grads();
            backbone.backward(&tape_b, demb, &mut g_back);
            opt_h.step(&mut head.params, &g_head);
            opt_b.step(&mut backbone.params, &g_back);
        }
        if !backbone.all_finite() || !head.all_finite() {
            return Err(Error::Diverged { stage: stage.to_string(), epoch });
        }
        let n = set.len().max(1) as f64;
        report.loss_per_epoch.push(loss_sum / n);
        report.accuracy_per_epoch.push(correct as f64 / n);
        debug!("{stage}: epoch {epoch} loss {:.4} acc {:.3}", loss_sum / n, correct as f64 / n);
    }
    Ok(report)
}

/// Argmax class per image, evaluated in fixed-size chunks.
pub(crate) fn predict<T: Scalar>(backbone: &Net<T>, head: &Net<T>, set: &LabeledSet<T>) -> Vec<usize> {
    let idx: Vec<usize> = (0..set.len()).collect();
    idx.chunks(64)
        .flat_map(|chunk| {
            let (x, _) = set.batch(chunk);
            argmax_columns(&head.infer(&backbone.infer(&x)))
        })
        .collect()
}

/// Backbone outputs per image.
pub(crate) fn embed<T: Scalar>(backbone: &Net<T>, images: &[&ImageTensor]) -> Vec<Vec<T>> {
    images
        .chunks(64)
        .flat_map(|chunk| {
            let planar: Vec<Vec<T>> = chunk.iter().map(|i| Tensor::planar_from_image(i)).collect();
            let refs: Vec<&[T]> = planar.iter().map(|p| p.as_slice()).collect();
            let out = backbone.infer(&Tensor::from_planar(&refs, chunk[0].height(), chunk[0].width()));
            (0..out.batch).map(|n| out.planar(n)).collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_decays_at_two_thirds() {
        let cfg = TrainConfig { epochs: 9, ..TrainConfig::new(0) };
        assert_eq!(cfg.lr_at(5), 0.01);
        assert!((cfg.lr_at(6) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::new(0) }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::new(0) }.validate().is_err());
        assert!(TrainConfig { weight_decay: -1.0, ..TrainConfig::new(0) }.validate().is_err());
    }
}
