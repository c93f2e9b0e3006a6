use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{AdversarialMode, Lambdas};
use super::matte::SoftMatte;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{Net, NetBuilder, Tape, Tensor};
use crate::scalar::Scalar;
use crate::synth_data::{Dataset, Origin};
use crate::util::{derive_seed, read_json, write_json};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_KIND: &str = "translation-model";

/// Translated data gets domain id `TRANSLATED_DOMAIN_BASE + source domain id`.
pub const TRANSLATED_DOMAIN_BASE: u32 = 5_000;

/// Inputs are clipped to ±(1 − SKIP_CLIP) before the inverse tanh of the skip path.
const SKIP_CLIP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorInit {
    /// last decoder layer starts at zero, so the untrained generator is the identity
    #[default]
    Identity,
    /// every layer randomly initialized
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorArch {
    pub height: usize,
    pub width: usize,
    /// channels after the first downsampling block; doubled by the second
    pub base_width: usize,
    pub residual_blocks: usize,
    pub discriminator_width: usize,
    pub init: GeneratorInit,
}

impl Default for TranslatorArch {
    fn default() -> Self {
        TranslatorArch { height: 64, width: 32, base_width: 16, residual_blocks: 2, discriminator_width: 16, init: GeneratorInit::Identity }
    }
}

impl TranslatorArch {
    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height < 8 || self.width < 8 {
            return Err(Error::validation(format!("translator needs a frame divisible by 4 and ≥ 8, got {}×{}", self.height, self.width)));
        }
        if self.base_width == 0 || self.discriminator_width == 0 {
            return Err(Error::validation("translator widths must be ≥ 1"));
        }
        if !(2..=4).contains(&self.residual_blocks) {
            return Err(Error::validation(format!("residual_blocks = {} must be in 2..=4", self.residual_blocks)));
        }
        Ok(())
    }

    fn generator<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Generator<T> {
        let (c, c2) = (self.base_width, 2 * self.base_width);
        let mut b = NetBuilder::new().conv(3, c, 3, 2, 1).relu().conv(c, c2, 3, 2, 1).relu();
        for _ in 0..self.residual_blocks {
            b = b.begin_residual().conv(c2, c2, 3, 1, 1).relu().conv(c2, c2, 3, 1, 1).end_residual();
        }
        b = b.upsample2x().conv(c2, c, 3, 1, 1).relu().upsample2x();
        b = match self.init {
            GeneratorInit::Identity => b.conv_zero(c, 3, 3, 1, 1),
            GeneratorInit::Random => b.conv(c, 3, 3, 1, 1),
        };
        Generator { net: b.build(rng) }
    }

    fn discriminator<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> Net<T> {
        let c = self.discriminator_width;
        NetBuilder::new().conv(3, c, 4, 2, 1).leaky_relu(0.2).conv(c, 2 * c, 4, 2, 1).leaky_relu(0.2).conv(2 * c, 1, 3, 1, 1).sigmoid().build(rng)
    }
}

/// Encoder, residual blocks and decoder predicting a residual `r`; the output
/// is `tanh(atanh(x) + r)`, so images stay in (−1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub net: Net<T>,
}

pub struct GeneratorTape<T> {
    tape: Tape<T>,
    input: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> Generator<T> {
    fn skip(v: T) -> T {
        let lim = T::one() - T::lit(SKIP_CLIP);
        v.max(-lim).min(lim).atanh()
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, GeneratorTape<T>) {
        let (r, tape) = self.net.forward(x);
        let out: Vec<T> = x.data.iter().zip(&r.data).map(|(&v, &d)| (Self::skip(v) + d).tanh()).collect();
        let y = Tensor::from_vec(3, x.batch, x.height, x.width, out);
        let gt = GeneratorTape { tape, input: x.data.clone(), output: y.data.clone() };
        (y, gt)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let r = self.net.infer(x);
        let out = x.data.iter().zip(&r.data).map(|(&v, &d)| (Self::skip(v) + d).tanh()).collect();
        Tensor::from_vec(3, x.batch, x.height, x.width, out)
    }

    /// Accumulates parameter gradients and returns the gradient with respect to the input.
    pub fn backward(&self, gt: &GeneratorTape<T>, grad_out: &Tensor<T>, grads: &mut [T]) -> Tensor<T> {
        let lim = T::one() - T::lit(SKIP_CLIP);
        let mut dz = grad_out.clone();
        for (d, &y) in dz.data.iter_mut().zip(&gt.output) {
            *d *= T::one() - y * y;
        }
        let mut dx = self.net.backward(&gt.tape, dz.clone(), grads);
        for ((g, &d), &v) in dx.data.iter_mut().zip(&dz.data).zip(&gt.input) {
            if v.abs() < lim {
                *g += d / (T::one() - v * v);
            }
        }
        dx
    }
}

/// Generators G (source → target) and F (target → source) with their discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationModel<T> {
    pub arch: TranslatorArch,
    pub g: Generator<T>,
    pub f: Generator<T>,
    /// judges source-domain images
    pub d_s: Net<T>,
    /// judges target-domain images
    pub d_r: Net<T>,
    pub matte: SoftMatte,
    pub lambdas: Lambdas,
    pub adversarial: AdversarialMode,
    /// domain id of the synthetic data G was trained on
    pub source_domain: u32,
    pub version: u32,
}

impl<T: Scalar> TranslationModel<T> {
    pub fn new(arch: TranslatorArch, matte: SoftMatte, lambdas: Lambdas, adversarial: AdversarialMode, source_domain: u32, seed: u64) -> Result<Self> {
        arch.validate()?;
        lambdas.validate()?;
        if matte.height != arch.height || matte.width != arch.width {
            return Err(Error::validation(format!("matte {}×{} does not match translator frame {}×{}", matte.height, matte.width, arch.height, arch.width)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "translation-init"));
        let g = arch.generator(&mut rng);
        let f = arch.generator(&mut rng);
        let d_s = arch.discriminator(&mut rng);
        let d_r = arch.discriminator(&mut rng);
        Ok(TranslationModel { arch, g, f, d_s, d_r, matte, lambdas, adversarial, source_domain, version: CHECKPOINT_VERSION })
    }

    fn check_images(&self, images: &[&ImageTensor]) -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            if img.height() != self.arch.height || img.width() != self.arch.width {
                return Err(Error::validation(format!("image {i} is {}×{}, translator expects {}×{}", img.height(), img.width(), self.arch.height, self.arch.width)));
            }
        }
        Ok(())
    }

    /// Applies G to images in [0,1].
    pub fn translate_images(&self, images: &[&ImageTensor]) -> Result<Vec<ImageTensor>> {
        self.check_images(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            out.extend(self.g.infer(&Tensor::from_images(chunk)).to_images());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let p = |n: &Net<T>| n.params.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        write_json(
            path,
            &Checkpoint {
                kind: CHECKPOINT_KIND.into(),
                version: self.version,
                arch: self.arch.clone(),
                matte: self.matte.clone(),
                lambdas: self.lambdas,
                adversarial: self.adversarial,
                source_domain: self.source_domain,
                g: p(&self.g.net),
                f: p(&self.f.net),
                d_s: p(&self.d_s),
                d_r: p(&self.d_r),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.kind != CHECKPOINT_KIND || ck.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("{}: not a v{CHECKPOINT_VERSION} {CHECKPOINT_KIND} checkpoint", path.display())));
        }
        let mut m = TranslationModel::<T>::new(ck.arch, ck.matte, ck.lambdas, ck.adversarial, ck.source_domain, 0)?;
        for (net, vals) in [(&mut m.g.net, ck.g), (&mut m.f.net, ck.f), (&mut m.d_s, ck.d_s), (&mut m.d_r, ck.d_r)] {
            if net.params.len() != vals.len() {
                return Err(Error::validation(format!("{}: parameter count does not match architecture", path.display())));
            }
            net.params = vals.into_iter().map(T::lit).collect();
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    kind: String,
    version: u32,
    arch: TranslatorArch,
    matte: SoftMatte,
    lambdas: Lambdas,
    adversarial: AdversarialMode,
    source_domain: u32,
    g: Vec<f64>,
    f: Vec<f64>,
    d_s: Vec<f64>,
    d_r: Vec<f64>,
}

/// G(s) for every sample, labels carried over, under a fresh domain id.
pub fn translate<T: Scalar>(model: &TranslationModel<T>, source: &Dataset) -> Result<Dataset> {
    if source.is_empty() {
        return Err(Error::validation(format!("dataset {} is empty", source.name)));
    }
    if let Some(other) = source.domain_ids().into_iter().find(|&d| d != model.source_domain) {
        return Err(Error::validation(format!("model was trained on domain {}, dataset {} contains domain {other}", model.source_domain, source.name)));
    }
    let images = model.translate_images(&source.images())?;
    let domain_id = TRANSLATED_DOMAIN_BASE + model.source_domain;
    let mut out = Dataset { name: format!("translated-{}", source.name), height: source.height, width: source.width, samples: Vec::with_capacity(source.len()) };
    for (s, img) in source.samples.iter().zip(images) {
        out.samples.push(crate::synth_data::Sample { image: img.quantized(), identity_id: s.identity_id, domain_id, origin: Origin::Synthetic, path: s.path.clone() });
    }
    Ok(out)
}
