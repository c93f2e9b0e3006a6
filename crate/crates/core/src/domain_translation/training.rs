use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    cycle_loss, cycle_loss_grad, identity_mapping_loss, identity_mapping_loss_grad, masked_reg_loss, masked_reg_loss_grad, ref_loss, ref_loss_grad,
    AdversarialMode, Lambdas,
};
use super::matte::{make_soft_matte, SoftMatte, DEFAULT_SIGMA_FRAC};
use super::model::{TranslationModel, TranslatorArch};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Net, Tensor};
use crate::scalar::Scalar;
use crate::synth_data::{Dataset, Origin};
use crate::util::derive_seed;

/// Which regularizers join the adversarial and cycle terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// adversarial + λ1·cycle
    None,
    /// + λ2·identity mapping
    Id,
    /// + λ3·|G(s) − s| over the whole frame
    Ref,
    /// + λ2·identity mapping + λ3·matte-weighted |G(s) − s|
    MaskFull,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::Id, Ablation::Ref, Ablation::MaskFull];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Id => "id",
            Ablation::Ref => "ref",
            Ablation::MaskFull => "mask_full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::validation(format!("unknown ablation `{s}` (expected none, id, ref or mask_full)")))
    }

    /// (identity, reference, mask) weights in effect.
    fn weights(self, l: &Lambdas) -> (f64, f64, f64) {
        match self {
            Ablation::None => (0.0, 0.0, 0.0),
            Ablation::Id => (l.identity, 0.0, 0.0),
            Ablation::Ref => (0.0, l.mask, 0.0),
            Ablation::MaskFull => (l.identity, 0.0, l.mask),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationConfig {
    pub arch: TranslatorArch,
    pub lambdas: Lambdas,
    pub adversarial: AdversarialMode,
    pub ablation: Ablation,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// generated images kept for discriminator updates
    pub replay_buffer: usize,
    pub matte_sigma_frac: (f64, f64),
    /// upper bound reported against the final masked loss, in [-1,1] pixel units
    pub mask_budget: f64,
    /// overridden with a derived seed when run inside a pipeline
    #[serde(default)]
    pub seed: u64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationConfig::new(0)
    }
}

impl TranslationConfig {
    pub fn new(seed: u64) -> Self {
        TranslationConfig {
            arch: TranslatorArch::default(),
            lambdas: Lambdas::default(),
            adversarial: AdversarialMode::NonSaturating,
            ablation: Ablation::MaskFull,
            epochs: 10,
            batch_size: 4,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            replay_buffer: 50,
            matte_sigma_frac: DEFAULT_SIGMA_FRAC,
            mask_budget: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.lambdas.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("translation epochs and batch_size must be ≥ 1"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::validation("translation adam.lr must be > 0"));
        }
        Ok(())
    }
}

/// Mean loss values over one epoch's generator and discriminator steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLosses {
    pub gan_g: f64,
    pub gan_f: f64,
    pub cycle: f64,
    pub identity: f64,
    pub reference: f64,
    pub masked_reg: f64,
    /// generator objective actually minimized
    pub objective: f64,
    pub d_r: f64,
    pub d_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub ablation: Ablation,
    pub epochs: Vec<EpochLosses>,
    pub final_masked_reg_loss: f64,
    pub mask_budget: f64,
    pub within_mask_budget: bool,
}

/// Fixed-capacity pool of past generated images.
struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<Vec<T>>,
}

impl<T: Scalar> ReplayBuffer<T> {
    /// Stores the new images and returns the batch the discriminator should see:
    /// each slot is the new image or, half the time once full, an older one it replaces.
    fn exchange(&mut self, fresh: &Tensor<T>, rng: &mut ChaCha8Rng) -> Tensor<T> {
        if self.capacity == 0 {
            return fresh.clone();
        }
        let mut out: Vec<Vec<T>> = Vec::with_capacity(fresh.batch);
        for n in 0..fresh.batch {
            let img = fresh.planar(n);
            if self.items.len() < self.capacity {
                self.items.push(img.clone());
                out.push(img);
            } else if rng.random_bool(0.5) {
                let k = rng.random_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.items[k], img));
            } else {
                out.push(img);
            }
        }
        let refs: Vec<&[T]> = out.iter().map(|v| v.as_slice()).collect();
        Tensor::from_planar(&refs, fresh.height, fresh.width)
    }
}

fn scaled<T: Scalar>(mut t: Tensor<T>, k: f64) -> Tensor<T> {
    let k = T::lit(k);
    t.data.iter_mut().for_each(|v| *v *= k);
    t
}

fn batch_of<T: Scalar>(planar: &[Vec<T>], idx: &[usize], h: usize, w: usize) -> Tensor<T> {
    let refs: Vec<&[T]> = idx.iter().map(|&i| planar[i].as_slice()).collect();
    Tensor::from_planar(&refs, h, w)
}

/// Gradient of a discriminator-scored term with respect to the scored images; D's own gradients are discarded.
fn through_discriminator<T: Scalar>(d: &Net<T>, images: &Tensor<T>, score_grad: impl FnOnce(&Tensor<T>) -> Result<(T, Tensor<T>)>) -> Result<(T, Tensor<T>)> {
    let (scores, tape) = d.forward(images);
    let (loss, ds) = score_grad(&scores)?;
    let mut scratch = d.zero_grads();
    Ok((loss, d.backward(&tape, ds, &mut scratch)))
}

fn discriminator_step<T: Scalar>(d: &mut Net<T>, opt: &mut Adam<T>, mode: AdversarialMode, real: &Tensor<T>, fake: &Tensor<T>) -> Result<f64> {
    let (sr, tr) = d.forward(real);
    let (sf, tf) = d.forward(fake);
    let (loss, gr, gf) = mode.discriminator_loss(&sr, &sf)?;
    let mut grads = d.zero_grads();
    d.backward(&tr, scaled(gr, 0.5), &mut grads);
    d.backward(&tf, scaled(gf, 0.5), &mut grads);
    opt.step(&mut d.params, &grads);
    Ok(loss.as_f64())
}

fn check_inputs(source: &Dataset, target: &Dataset, arch: &TranslatorArch) -> Result<u32> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::validation("translation needs non-empty source and target datasets"));
    }
    if let Some(s) = source.samples.iter().find(|s| s.origin != Origin::Synthetic) {
        return Err(Error::validation(format!("source sample {} is not synthetic", s.path)));
    }
    let domains = source.domain_ids();
    if domains.len() != 1 {
        return Err(Error::validation(format!("source must hold exactly one synthetic domain, found {domains:?}")));
    }
    for ds in [source, target] {
        if ds.height != arch.height || ds.width != arch.width {
            return Err(Error::validation(format!("dataset {} is {}×{}, translator expects {}×{}", ds.name, ds.height, ds.width, arch.height, arch.width)));
        }
    }
    Ok(*domains.iter().next().expect("one domain"))
}

/// Alternating adversarial training of G: source → target and F: target → source.
///
/// Target identity labels are never read.
pub fn train_translation<T: Scalar>(source: &Dataset, target: &Dataset, config: &TranslationConfig) -> Result<(TranslationModel<T>, TranslationReport)> {
    config.validate()?;
    let source_domain = check_inputs(source, target, &config.arch)?;
    let (h, w) = (config.arch.height, config.arch.width);
    let matte = make_soft_matte(h, w, config.matte_sigma_frac)?;
    let mut model = TranslationModel::<T>::new(config.arch.clone(), matte, config.lambdas, config.adversarial, source_domain, config.seed)?;
    let s_planar: Vec<Vec<T>> = source.samples.iter().map(|s| Tensor::planar_from_image(&s.image)).collect();
    let x_planar: Vec<Vec<T>> = target.samples.iter().map(|s| Tensor::planar_from_image(&s.image)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "translation-schedule"));
    let mut opt_g = Adam::new(model.g.net.param_count(), config.adam);
    let mut opt_f = Adam::new(model.f.net.param_count(), config.adam);
    let mut opt_ds = Adam::new(model.d_s.param_count(), config.adam);
    let mut opt_dr = Adam::new(model.d_r.param_count(), config.adam);
    let mut pool_r = ReplayBuffer { capacity: config.replay_buffer, items: Vec::new() };
    let mut pool_s = ReplayBuffer { capacity: config.replay_buffer, items: Vec::new() };
    let (lambda_id, lambda_ref, lambda_mask) = config.ablation.weights(&config.lambdas);
    let lambda_cyc = config.lambdas.cycle;
    let b = config.batch_size;
    // an epoch is one pass over the source; target frames are streamed from a
    // reshuffled queue so a large target pool does not lengthen epochs
    let steps = s_planar.len().div_ceil(b);
    let mut s_order: Vec<usize> = (0..s_planar.len()).collect();
    let mut x_order: Vec<usize> = (0..x_planar.len()).collect();
    x_order.shuffle(&mut rng);
    let mut x_cursor = 0;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        s_order.shuffle(&mut rng);
        let mut acc = EpochLosses::default();
        for step in 0..steps {
            let si: Vec<usize> = (0..b).map(|j| s_order[(step * b + j) % s_order.len()]).collect();
            let xi: Vec<usize> = (0..b)
                .map(|_| {
                    if x_cursor == x_order.len() {
                        x_order.shuffle(&mut rng);
                        x_cursor = 0;
                    }
                    x_cursor += 1;
                    x_order[x_cursor - 1]
                })
                .collect();
            let s = batch_of(&s_planar, &si, h, w);
            let x = batch_of(&x_planar, &xi, h, w);
            let terms = generator_step(&mut model, &s, &x, (lambda_cyc, lambda_id, lambda_ref, lambda_mask), &mut opt_g, &mut opt_f)?;
            let (gs, fx) = (terms.gs, terms.fx);
            let fake_r = pool_r.exchange(&gs, &mut rng);
            let fake_s = pool_s.exchange(&fx, &mut rng);
            let d_r = discriminator_step(&mut model.d_r, &mut opt_dr, config.adversarial, &x, &fake_r)?;
            let d_s = discriminator_step(&mut model.d_s, &mut opt_ds, config.adversarial, &s, &fake_s)?;
            let l = &terms.losses;
            for (a, v) in [
                (&mut acc.gan_g, l.gan_g),
                (&mut acc.gan_f, l.gan_f),
                (&mut acc.cycle, l.cycle),
                (&mut acc.identity, l.identity),
                (&mut acc.reference, l.reference),
                (&mut acc.masked_reg, l.masked_reg),
                (&mut acc.objective, l.objective),
                (&mut acc.d_r, d_r),
                (&mut acc.d_s, d_s),
            ] {
                *a += v / steps as f64;
            }
        }
        let finite = [acc.objective, acc.d_r, acc.d_s].iter().all(|v| v.is_finite());
        if !finite || !model.g.net.all_finite() || !model.f.net.all_finite() || !model.d_r.all_finite() || !model.d_s.all_finite() {
            return Err(Error::Diverged { stage: "train-translate".into(), epoch });
        }
        debug!(
            "train-translate[{}] epoch {epoch}: gan {:.3}/{:.3} cyc {:.4} id {:.4} ref {:.4} mask {:.4} D {:.3}/{:.3}",
            config.ablation.name(),
            acc.gan_g,
            acc.gan_f,
            acc.cycle,
            acc.identity,
            acc.reference,
            acc.masked_reg,
            acc.d_r,
            acc.d_s
        );
        history.push(acc);
    }
    let final_masked_reg_loss = history.last().map_or(f64::NAN, |e| e.masked_reg);
    info!("train-translate[{}]: final masked loss {final_masked_reg_loss:.4} (budget {})", config.ablation.name(), config.mask_budget);
    let report = TranslationReport {
        ablation: config.ablation,
        epochs: history,
        final_masked_reg_loss,
        mask_budget: config.mask_budget,
        within_mask_budget: final_masked_reg_loss <= config.mask_budget,
    };
    Ok((model, report))
}

struct StepTerms<T> {
    gs: Tensor<T>,
    fx: Tensor<T>,
    losses: EpochLosses,
}

/// One optimizer step on G and F; returns the generated batches for the discriminators.
fn generator_step<T: Scalar>(
    model: &mut TranslationModel<T>,
    s: &Tensor<T>,
    x: &Tensor<T>,
    (l_cyc, l_id, l_ref, l_mask): (f64, f64, f64, f64),
    opt_g: &mut Adam<T>,
    opt_f: &mut Adam<T>,
) -> Result<StepTerms<T>> {
    let mode = model.adversarial;
    let (gs, tape_gs) = model.g.forward(s);
    let (fx, tape_fx) = model.f.forward(x);
    let (fgs, tape_fgs) = model.f.forward(&gs);
    let (gfx, tape_gfx) = model.g.forward(&fx);
    let mut grad_g = model.g.net.zero_grads();
    let mut grad_f = model.f.net.zero_grads();

    let (gan_g, mut d_gs) = through_discriminator(&model.d_r, &gs, |sc| mode.generator_loss(sc))?;
    let (gan_f, mut d_fx) = through_discriminator(&model.d_s, &fx, |sc| mode.generator_loss(sc))?;

    let cycle = cycle_loss(s, &fgs, x, &gfx)?;
    let (d_fgs, d_gfx) = cycle_loss_grad(s, &fgs, x, &gfx)?;
    d_gs.add_assign(&model.f.backward(&tape_fgs, &scaled(d_fgs, l_cyc), &mut grad_f));
    d_fx.add_assign(&model.g.backward(&tape_gfx, &scaled(d_gfx, l_cyc), &mut grad_g));

    let reference = ref_loss(&gs, s)?;
    let masked = masked_reg_loss(&gs, s, &model.matte)?;
    if l_ref > 0.0 {
        d_gs.add_assign(&scaled(ref_loss_grad(&gs, s)?, l_ref));
    }
    if l_mask > 0.0 {
        d_gs.add_assign(&scaled(masked_reg_loss_grad(&gs, s, &model.matte)?, l_mask));
    }
    model.g.backward(&tape_gs, &d_gs, &mut grad_g);
    model.f.backward(&tape_fx, &d_fx, &mut grad_f);

    let identity = if l_id > 0.0 {
        let (gx, tape_gx) = model.g.forward(x);
        let (fs, tape_fs) = model.f.forward(s);
        let (d_gx, d_fs) = identity_mapping_loss_grad(&gx, x, &fs, s)?;
        model.g.backward(&tape_gx, &scaled(d_gx, l_id), &mut grad_g);
        model.f.backward(&tape_fs, &scaled(d_fs, l_id), &mut grad_f);
        identity_mapping_loss(&gx, x, &fs, s)?
    } else {
        identity_mapping_loss(&model.g.infer(x), x, &model.f.infer(s), s)?
    };
    opt_g.step(&mut model.g.net.params, &grad_g);
    opt_f.step(&mut model.f.net.params, &grad_f);

    let f = |v: T| v.as_f64();
    let objective = f(gan_g) + f(gan_f) + l_cyc * f(cycle) + l_id * f(identity) + l_ref * f(reference) + l_mask * f(masked);
    let losses = EpochLosses {
        gan_g: f(gan_g),
        gan_f: f(gan_f),
        cycle: f(cycle),
        identity: f(identity),
        reference: f(reference),
        masked_reg: f(masked),
        objective,
        d_r: 0.0,
        d_s: 0.0,
    };
    Ok(StepTerms { gs, fx, losses })
}

/// Per-channel |mean color of G(s) − mean color of s| inside the matte's core (value > 0.5), in [0,1] units.
pub fn foreground_color_shift(source: &Dataset, translated: &Dataset, matte: &SoftMatte) -> Result<[f64; 3]> {
    if source.len() != translated.len() || source.is_empty() {
        return Err(Error::validation("color shift needs equally sized, non-empty datasets"));
    }
    if source.height != matte.height || source.width != matte.width || translated.height != matte.height || translated.width != matte.width {
        return Err(Error::validation("color shift: matte and image sizes differ"));
    }
    let core: Vec<usize> = (0..matte.values.len()).filter(|&i| matte.values[i] > 0.5).collect();
    let mean = |ds: &Dataset| {
        let mut m = [0.0f64; 3];
        for s in &ds.samples {
            for &p in &core {
                for (c, mc) in m.iter_mut().enumerate() {
                    *mc += s.image.data()[p * 3 + c] as f64;
                }
            }
        }
        m.map(|v| v / (ds.len() * core.len()) as f64)
    };
    let (a, b) = (mean(source), mean(translated));
    Ok([0, 1, 2].map(|c| (a[c] - b[c]).abs()))
}
