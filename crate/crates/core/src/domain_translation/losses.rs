//! Translation objectives and their gradients with respect to network outputs.
//!
//! Image batches are `[3, n, h, w]` tensors in [-1,1]; discriminator score
//! grids are `[1, n, gh, gw]` tensors of probabilities.

use serde::{Deserialize, Serialize};

use super::matte::SoftMatte;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Probability clamp applied before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

fn check_scores<T: Scalar>(name: &str, t: &Tensor<T>) -> Result<()> {
    if t.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical(format!("{name} discriminator scores contain NaN")));
    }
    if t.is_empty() {
        return Err(Error::validation(format!("{name} discriminator scores are empty")));
    }
    Ok(())
}

fn clamp_score<T: Scalar>(p: T) -> (T, bool) {
    let (lo, hi) = (T::lit(SCORE_EPS), T::one() - T::lit(SCORE_EPS));
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

fn mean_of<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> T {
    t.data.iter().map(|&p| f(clamp_score(p).0)).sum::<T>() / T::of_usize(t.len())
}

/// `E[log D(x)] + E[log(1 − D(G(s)))]` over real and generated score grids.
pub fn adversarial_loss<T: Scalar>(scores_real: &Tensor<T>, scores_fake: &Tensor<T>) -> Result<T> {
    check_scores("real", scores_real)?;
    check_scores("fake", scores_fake)?;
    Ok(mean_of(scores_real, |p| p.ln()) + mean_of(scores_fake, |p| (T::one() - p).ln()))
}

/// Gradients of [`adversarial_loss`] with respect to both score grids; zero where a score is clamped.
pub fn adversarial_loss_grad<T: Scalar>(scores_real: &Tensor<T>, scores_fake: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_scores("real", scores_real)?;
    check_scores("fake", scores_fake)?;
    let grad = |t: &Tensor<T>, f: &dyn Fn(T) -> T| {
        let n = T::of_usize(t.len());
        let mut g = t.zeros_like();
        for (gi, &p) in g.data.iter_mut().zip(&t.data) {
            let (p, inside) = clamp_score(p);
            if inside {
                *gi = f(p) / n;
            }
        }
        g
    };
    Ok((grad(scores_real, &|p| T::one() / p), grad(scores_fake, &|p| -T::one() / (T::one() - p))))
}

/// How the adversarial game is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// log loss; the generator minimizes `−E[log D(G(s))]`
    #[default]
    NonSaturating,
    /// log loss; the generator minimizes `E[log(1 − D(G(s)))]` literally
    Saturating,
    /// squared error against targets 1 (real) and 0 (generated)
    LeastSquares,
}

impl AdversarialMode {
    /// Generator-side adversarial loss on scores of generated images, and its gradient.
    pub fn generator_loss<T: Scalar>(self, scores_fake: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        check_scores("fake", scores_fake)?;
        let n = T::of_usize(scores_fake.len());
        let mut g = scores_fake.zeros_like();
        let mut loss = T::zero();
        for (gi, &raw) in g.data.iter_mut().zip(&scores_fake.data) {
            let (p, inside) = clamp_score(raw);
            let (l, d) = match self {
                AdversarialMode::NonSaturating => (-p.ln(), -T::one() / p),
                AdversarialMode::Saturating => ((T::one() - p).ln(), -T::one() / (T::one() - p)),
                AdversarialMode::LeastSquares => ((raw - T::one()).powi(2), T::lit(2.0) * (raw - T::one())),
            };
            loss += l;
            let active = inside || self == AdversarialMode::LeastSquares;
            *gi = if active { d / n } else { T::zero() };
        }
        Ok((loss / n, g))
    }

    /// Discriminator loss (to minimize) and gradients for real and generated scores.
    pub fn discriminator_loss<T: Scalar>(self, scores_real: &Tensor<T>, scores_fake: &Tensor<T>) -> Result<(T, Tensor<T>, Tensor<T>)> {
        match self {
            AdversarialMode::LeastSquares => {
                check_scores("real", scores_real)?;
                check_scores("fake", scores_fake)?;
                let (nr, nf) = (T::of_usize(scores_real.len()), T::of_usize(scores_fake.len()));
                let two = T::lit(2.0);
                let lr = scores_real.data.iter().map(|&p| (p - T::one()).powi(2)).sum::<T>() / nr;
                let lf = scores_fake.data.iter().map(|&p| p * p).sum::<T>() / nf;
                let mut gr = scores_real.zeros_like();
                let mut gf = scores_fake.zeros_like();
                for (g, &p) in gr.data.iter_mut().zip(&scores_real.data) {
                    *g = two * (p - T::one()) / nr;
                }
                for (g, &p) in gf.data.iter_mut().zip(&scores_fake.data) {
                    *g = two * p / nf;
                }
                Ok((lr + lf, gr, gf))
            }
            _ => {
                let value = adversarial_loss(scores_real, scores_fake)?;
                let (mut gr, mut gf) = adversarial_loss_grad(scores_real, scores_fake)?;
                for g in gr.data.iter_mut().chain(gf.data.iter_mut()) {
                    *g = -*g;
                }
                Ok((-value, gr, gf))
            }
        }
    }
}

fn check_pair<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::validation(format!("{what}: shape {:?} does not match {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::validation(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean of `w · |a − b|`, with `w` the matte value broadcast over channels and batch.
fn weighted_l1<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, weights: Option<&[T]>) -> T {
    let plane = a.plane();
    let sum: T = a
        .data
        .iter()
        .zip(&b.data)
        .enumerate()
        .map(|(i, (&x, &y))| {
            let d = (x - y).abs();
            weights.map_or(d, |w| d * w[i % plane])
        })
        .sum();
    sum / T::of_usize(a.len())
}

/// d/da of [`weighted_l1`]; the subgradient at `a = b` is 0.
fn weighted_l1_grad<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, weights: Option<&[T]>) -> Tensor<T> {
    let plane = a.plane();
    let n = T::of_usize(a.len());
    let mut g = a.zeros_like();
    for (i, gi) in g.data.iter_mut().enumerate() {
        let d = a.data[i] - b.data[i];
        let s = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        *gi = weights.map_or(s, |w| s * w[i % plane]) / n;
    }
    g
}

/// `E|F(G(s)) − s| + E|G(F(x)) − x|`.
pub fn cycle_loss<T: Scalar>(s: &Tensor<T>, fgs: &Tensor<T>, x: &Tensor<T>, gfx: &Tensor<T>) -> Result<T> {
    check_pair("cycle loss (source)", fgs, s)?;
    check_pair("cycle loss (target)", gfx, x)?;
    Ok(weighted_l1(fgs, s, None) + weighted_l1(gfx, x, None))
}

/// Gradients of [`cycle_loss`] with respect to `fgs` and `gfx`.
pub fn cycle_loss_grad<T: Scalar>(s: &Tensor<T>, fgs: &Tensor<T>, x: &Tensor<T>, gfx: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_pair("cycle loss (source)", fgs, s)?;
    check_pair("cycle loss (target)", gfx, x)?;
    Ok((weighted_l1_grad(fgs, s, None), weighted_l1_grad(gfx, x, None)))
}

/// `E|G(x) − x| + E|F(s) − s|`.
pub fn identity_mapping_loss<T: Scalar>(gx: &Tensor<T>, x: &Tensor<T>, fs: &Tensor<T>, s: &Tensor<T>) -> Result<T> {
    check_pair("identity loss (target)", gx, x)?;
    check_pair("identity loss (source)", fs, s)?;
    Ok(weighted_l1(gx, x, None) + weighted_l1(fs, s, None))
}

/// Gradients of [`identity_mapping_loss`] with respect to `gx` and `fs`.
pub fn identity_mapping_loss_grad<T: Scalar>(gx: &Tensor<T>, x: &Tensor<T>, fs: &Tensor<T>, s: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_pair("identity loss (target)", gx, x)?;
    check_pair("identity loss (source)", fs, s)?;
    Ok((weighted_l1_grad(gx, x, None), weighted_l1_grad(fs, s, None)))
}

/// `E|G(s) − s|`.
pub fn ref_loss<T: Scalar>(gs: &Tensor<T>, s: &Tensor<T>) -> Result<T> {
    check_pair("reference loss", gs, s)?;
    Ok(weighted_l1(gs, s, None))
}

pub fn ref_loss_grad<T: Scalar>(gs: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("reference loss", gs, s)?;
    Ok(weighted_l1_grad(gs, s, None))
}

fn matte_weights<T: Scalar>(gs: &Tensor<T>, matte: &SoftMatte) -> Result<Vec<T>> {
    if gs.height != matte.height || gs.width != matte.width {
        return Err(Error::validation(format!("matte is {}×{}, images are {}×{}", matte.height, matte.width, gs.height, gs.width)));
    }
    Ok(matte.values.iter().map(|&v| T::lit(v)).collect())
}

/// `E|(G(s) − s) ⊙ m|`, the matte broadcast over channels.
pub fn masked_reg_loss<T: Scalar>(gs: &Tensor<T>, s: &Tensor<T>, matte: &SoftMatte) -> Result<T> {
    check_pair("masked loss", gs, s)?;
    let w = matte_weights(gs, matte)?;
    Ok(weighted_l1(gs, s, Some(&w)))
}

pub fn masked_reg_loss_grad<T: Scalar>(gs: &Tensor<T>, s: &Tensor<T>, matte: &SoftMatte) -> Result<Tensor<T>> {
    check_pair("masked loss", gs, s)?;
    let w = matte_weights(gs, matte)?;
    Ok(weighted_l1_grad(gs, s, Some(&w)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambdas {
    pub cycle: f64,
    pub identity: f64,
    pub mask: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas { cycle: 10.0, identity: 10.0, mask: 5.0 }
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cycle", self.cycle), ("identity", self.identity), ("mask", self.mask)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("lambdas.{name} = {v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Loss values entering the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms<T> {
    /// adversarial term for G against D_R
    pub gan_g: T,
    /// adversarial term for F against D_S
    pub gan_f: T,
    pub cycle: T,
    pub identity: T,
    pub mask: T,
}

/// `gan_g + gan_f + λ1·cycle + λ2·identity + λ3·mask`.
pub fn full_objective<T: Scalar>(terms: &ObjectiveTerms<T>, lambdas: &Lambdas) -> T {
    terms.gan_g + terms.gan_f + T::lit(lambdas.cycle) * terms.cycle + T::lit(lambdas.identity) * terms.identity + T::lit(lambdas.mask) * terms.mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain_translation::matte::{make_soft_matte, DEFAULT_SIGMA_FRAC};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(3, n, h, w, (0..3 * n * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
        Tensor::from_vec(1, n, 4, 4, (0..16 * n).map(|_| rng.random_range(0.02..0.98)).collect())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    /// Per-element loop over (batch, channel, row, col), independent of the flat-slice code.
    fn oracle_l1(a: &Tensor<f64>, b: &Tensor<f64>, m: Option<&SoftMatte>) -> f64 {
        let mut total = 0.0;
        for n in 0..a.batch {
            for c in 0..a.channels {
                for y in 0..a.height {
                    for x in 0..a.width {
                        let i = a.idx(c, n, y, x);
                        let w = m.map_or(1.0, |m| m.at(y, x));
                        total += (a.data[i] - b.data[i]).abs() * w;
                    }
                }
            }
        }
        total / (a.channels * a.batch * a.height * a.width) as f64
    }

    fn oracle_gan(real: &Tensor<f64>, fake: &Tensor<f64>) -> f64 {
        let mut lr = 0.0;
        for &p in &real.data {
            lr += p.max(SCORE_EPS).min(1.0 - SCORE_EPS).ln();
        }
        let mut lf = 0.0;
        for &p in &fake.data {
            lf += (1.0 - p.max(SCORE_EPS).min(1.0 - SCORE_EPS)).ln();
        }
        lr / real.len() as f64 + lf / fake.len() as f64
    }

    #[test]
    fn adversarial_loss_reference_values() {
        let half = Tensor::from_vec(1, 1, 4, 4, vec![0.5; 16]);
        assert!((adversarial_loss(&half, &half).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        let real = Tensor::from_vec(1, 1, 2, 2, vec![1.0 - SCORE_EPS; 4]);
        let fake = Tensor::from_vec(1, 1, 2, 2, vec![SCORE_EPS; 4]);
        assert!(adversarial_loss(&real, &fake).unwrap().abs() < 1e-6);
        // out-of-range scores are clamped, not propagated
        let ones = Tensor::from_vec(1, 1, 2, 2, vec![1.0; 4]);
        assert!(adversarial_loss(&ones, &fake).unwrap().is_finite());
    }

    #[test]
    fn nan_scores_are_a_numerical_error() {
        let ok = Tensor::from_vec(1, 1, 1, 2, vec![0.5, 0.5]);
        let bad = Tensor::from_vec(1, 1, 1, 2, vec![0.5, f64::NAN]);
        assert!(matches!(adversarial_loss(&ok, &bad), Err(Error::Numerical(_))));
        assert!(matches!(AdversarialMode::NonSaturating.generator_loss(&bad), Err(Error::Numerical(_))));
    }

    #[test]
    fn l1_losses_reference_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_batch(&mut rng, 2, 4, 4);
        let x = random_batch(&mut rng, 2, 4, 4);
        let mut shifted = s.clone();
        shifted.data.iter_mut().for_each(|v| *v += 0.1);
        assert_eq!(cycle_loss(&s, &s, &x, &x).unwrap(), 0.0);
        assert!((cycle_loss(&s, &shifted, &x, &x).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(identity_mapping_loss(&x, &x, &s, &s).unwrap(), 0.0);
        let mut xc = x.clone();
        xc.data.iter_mut().for_each(|v| *v -= 0.3);
        assert!((identity_mapping_loss(&xc, &x, &s, &s).unwrap() - 0.3).abs() < 1e-12);
        let mut s2 = s.clone();
        s2.data.iter_mut().for_each(|v| *v += 0.2);
        assert_eq!(ref_loss(&s, &s).unwrap(), 0.0);
        assert!((ref_loss(&s2, &s).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn masked_loss_constant_offset_and_location() {
        let m = make_soft_matte(8, 8, DEFAULT_SIGMA_FRAC).unwrap();
        let s = Tensor::<f64>::zeros(3, 1, 8, 8);
        let mut d = s.clone();
        d.data.iter_mut().for_each(|v| *v += 0.4);
        assert_eq!(masked_reg_loss(&s, &s, &m).unwrap(), 0.0);
        assert!((masked_reg_loss(&d, &s, &m).unwrap() - 0.4 * m.mean()).abs() < 1e-12);
        let poke = |pixels: &[(usize, usize)]| {
            let mut t = s.clone();
            for &(y, x) in pixels {
                for c in 0..3 {
                    let i = t.idx(c, 0, y, x);
                    t.data[i] = 0.5;
                }
            }
            masked_reg_loss(&t, &s, &m).unwrap()
        };
        let corners = poke(&[(0, 0), (0, 7), (7, 0), (7, 7)]);
        let center = poke(&[(3, 3), (3, 4), (4, 3), (4, 4)]);
        assert!(corners < center);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let a = Tensor::<f64>::zeros(3, 1, 8, 8);
        let b = Tensor::<f64>::zeros(3, 2, 8, 8);
        assert!(cycle_loss(&a, &b, &a, &a).is_err());
        assert!(identity_mapping_loss(&a, &a, &a, &b).is_err());
        assert!(ref_loss(&a, &b).is_err());
        let m = make_soft_matte(8, 16, DEFAULT_SIGMA_FRAC).unwrap();
        assert!(masked_reg_loss(&a, &a, &m).is_err());
    }

    #[test]
    fn full_objective_weighted_sum() {
        let ones = ObjectiveTerms { gan_g: 1.0, gan_f: 1.0, cycle: 1.0, identity: 1.0, mask: 1.0 };
        assert_eq!(full_objective(&ones, &Lambdas::default()), 27.0);
        assert_eq!(full_objective(&ObjectiveTerms::<f64>::default(), &Lambdas::default()), 0.0);
        let cyclegan = Lambdas { identity: 0.0, mask: 0.0, ..Lambdas::default() };
        let t = ObjectiveTerms { gan_g: 0.3, gan_f: 0.7, cycle: 0.25, identity: 9.0, mask: 4.0 };
        assert_eq!(full_objective(&t, &cyclegan), 0.3 + 0.7 + 10.0 * 0.25);
    }

    #[test]
    fn full_objective_is_linear_in_each_lambda() {
        let t = ObjectiveTerms { gan_g: 0.4, gan_f: -0.2, cycle: 0.31, identity: 0.17, mask: 0.09 };
        let base = Lambdas::default();
        let field: [fn(&mut Lambdas) -> &mut f64; 3] = [|l| &mut l.cycle, |l| &mut l.identity, |l| &mut l.mask];
        for f in field {
            let at = |v: f64| -> f64 {
                let mut l = base;
                *f(&mut l) = v;
                full_objective(&t, &l)
            };
            let (a, b, c) = (at(0.0), at(1.5), at(3.0));
            assert!(((b - a) - (c - b)).abs() < 1e-12);
        }
    }

    fn fd<F: Fn(&Tensor<f64>) -> f64>(f: F, x: &Tensor<f64>, analytic: &Tensor<f64>) {
        let h = 1e-3;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let numeric = (f(&p) - f(&m)) / (2.0 * h);
            let e = rel_err(numeric, analytic.data[i]);
            assert!(e <= 1e-3 || (numeric - analytic.data[i]).abs() < 1e-10, "element {i}: fd {numeric} vs {}", analytic.data[i]);
        }
    }

    /// Keeps every |a − b| at least 0.01 so the FD stencil never crosses an L1 kink.
    fn away_from_kinks(a: &mut Tensor<f64>, b: &Tensor<f64>) {
        for (x, &y) in a.data.iter_mut().zip(&b.data) {
            if (*x - y).abs() < 0.01 {
                *x = y + 0.05;
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (s, x) = (random_batch(&mut rng, 1, 4, 4), random_batch(&mut rng, 1, 4, 4));
        let (mut a, mut b) = (random_batch(&mut rng, 1, 4, 4), random_batch(&mut rng, 1, 4, 4));
        away_from_kinks(&mut a, &s);
        away_from_kinks(&mut b, &x);
        let (ga, gb) = cycle_loss_grad(&s, &a, &x, &b).unwrap();
        fd(|t| cycle_loss(&s, t, &x, &b).unwrap(), &a, &ga);
        fd(|t| cycle_loss(&s, &a, &x, t).unwrap(), &b, &gb);
        let (gx, gs) = identity_mapping_loss_grad(&b, &x, &a, &s).unwrap();
        fd(|t| identity_mapping_loss(t, &x, &a, &s).unwrap(), &b, &gx);
        fd(|t| identity_mapping_loss(&b, &x, t, &s).unwrap(), &a, &gs);
        fd(|t| ref_loss(t, &s).unwrap(), &a, &ref_loss_grad(&a, &s).unwrap());
        let m = make_soft_matte(8, 8, DEFAULT_SIGMA_FRAC).unwrap();
        let (s8, mut a8) = (random_batch(&mut rng, 1, 8, 8), random_batch(&mut rng, 1, 8, 8));
        away_from_kinks(&mut a8, &s8);
        fd(|t| masked_reg_loss(t, &s8, &m).unwrap(), &a8, &masked_reg_loss_grad(&a8, &s8, &m).unwrap());

        let (real, fake) = (random_scores(&mut rng, 1), random_scores(&mut rng, 1));
        let (gr, gf) = adversarial_loss_grad(&real, &fake).unwrap();
        fd(|t| adversarial_loss(t, &fake).unwrap(), &real, &gr);
        fd(|t| adversarial_loss(&real, t).unwrap(), &fake, &gf);
        for mode in [AdversarialMode::NonSaturating, AdversarialMode::Saturating, AdversarialMode::LeastSquares] {
            let (_, g) = mode.generator_loss(&fake).unwrap();
            fd(|t| mode.generator_loss(t).unwrap().0, &fake, &g);
            let (_, gr, gf) = mode.discriminator_loss(&real, &fake).unwrap();
            fd(|t| mode.discriminator_loss(t, &fake).unwrap().0, &real, &gr);
            fd(|t| mode.discriminator_loss(&real, t).unwrap().0, &fake, &gf);
        }
    }

    proptest! {
        #[test]
        fn losses_match_straight_line_oracles(seed in any::<u64>(), n in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = make_soft_matte(8, 8, (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0))).unwrap();
            let (s, x, a, b) = (random_batch(&mut rng, n, 8, 8), random_batch(&mut rng, n, 8, 8), random_batch(&mut rng, n, 8, 8), random_batch(&mut rng, n, 8, 8));
            prop_assert!(rel_err(cycle_loss(&s, &a, &x, &b).unwrap(), oracle_l1(&a, &s, None) + oracle_l1(&b, &x, None)) <= 1e-9);
            prop_assert!(rel_err(identity_mapping_loss(&b, &x, &a, &s).unwrap(), oracle_l1(&b, &x, None) + oracle_l1(&a, &s, None)) <= 1e-9);
            prop_assert!(rel_err(ref_loss(&a, &s).unwrap(), oracle_l1(&a, &s, None)) <= 1e-9);
            prop_assert!(rel_err(masked_reg_loss(&a, &s, &m).unwrap(), oracle_l1(&a, &s, Some(&m))) <= 1e-9);
            let (real, fake) = (random_scores(&mut rng, n), random_scores(&mut rng, n));
            prop_assert!(rel_err(adversarial_loss(&real, &fake).unwrap(), oracle_gan(&real, &fake)) <= 1e-9);
        }

        #[test]
        fn masked_loss_never_exceeds_reference_loss(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = make_soft_matte(8, 12, (rng.random_range(0.05..3.0), rng.random_range(0.05..3.0))).unwrap();
            let (s, a) = (random_batch(&mut rng, 2, 8, 12), random_batch(&mut rng, 2, 8, 12));
            prop_assert!(masked_reg_loss(&a, &s, &m).unwrap() <= ref_loss(&a, &s).unwrap());
        }
    }
}
