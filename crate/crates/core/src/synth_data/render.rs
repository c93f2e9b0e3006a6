//! Procedural person sprites under parametric illumination.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::specs::{IdentitySpec, IlluminationSpec};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSize {
    pub height: usize,
    pub width: usize,
}

impl FrameSize {
    pub const TOY: FrameSize = FrameSize { height: 64, width: 32 };

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::validation(format!("frame {}×{} smaller than 16×16", self.height, self.width)));
        }
        Ok(())
    }
}

impl Default for FrameSize {
    fn default() -> Self {
        Self::TOY
    }
}

/// Sensor/scene differences separating captured frames from clean renders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealnessGap {
    /// std of additive Gaussian sensor noise
    pub noise_sigma: f32,
    /// replace the flat background by seeded value noise
    pub texture: bool,
    /// one pass of a 3×3 box filter
    pub blur: bool,
}

impl Default for RealnessGap {
    fn default() -> Self {
        RealnessGap { noise_sigma: 0.02, texture: true, blur: true }
    }
}

impl RealnessGap {
    pub fn none() -> Self {
        RealnessGap { noise_sigma: 0.0, texture: false, blur: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation(format!("gap noise_sigma = {} must be finite and ≥ 0", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Body part regions in pixel units for one pose.
struct Layout {
    cx: f32,
    shear: f32,
    mid_y: f32,
    head: (f32, f32, f32),
    torso: (f32, f32, f32),
    legs: (f32, f32, f32, f32),
    arm: Option<(f32, f32, f32, f32)>,
}

impl Layout {
    fn new(identity: &IdentitySpec, pose_angle: f32, frame: FrameSize, jitter: (f32, f32)) -> Self {
        let (h, w) = (frame.height as f32, frame.width as f32);
        let g = &identity.body_geometry;
        let facing = pose_angle.cos().abs();
        let side = pose_angle.sin();
        let cx = w / 2.0 + jitter.0;
        let top = 0.07 * h + jitter.1;
        let head_r = g.head_radius * w;
        let head_cy = top + head_r;
        let torso_top = head_cy + head_r * 0.9;
        let torso_bottom = torso_top + g.torso_height * h;
        let half_torso = g.torso_width * w / 2.0 * (0.7 + 0.3 * facing);
        let leg_half = g.leg_width * w / 2.0;
        let leg_sep = (half_torso - leg_half).max(leg_half) * (0.45 + 0.55 * facing);
        let legs_bottom = 0.93 * h + jitter.1;
        let arm = (side.abs() > 0.3).then(|| {
            let arm_w = (0.08 * w).max(1.0);
            let x0 = if side > 0.0 { cx + half_torso } else { cx - half_torso - arm_w };
            (x0, x0 + arm_w, torso_top + 1.0, torso_top + 0.85 * g.torso_height * h)
        });
        Layout {
            cx,
            shear: 0.1 * side,
            mid_y: h / 2.0,
            head: (cx, head_cy, head_r),
            torso: (half_torso, torso_top, torso_bottom),
            legs: (leg_sep, leg_half, torso_bottom, legs_bottom),
            arm,
        }
    }

    /// Body part covering pixel (y, x): 0 head/skin, 1 torso, 2 legs.
    fn part_at(&self, y: usize, x: usize) -> Option<usize> {
        let py = y as f32 + 0.5;
        // shear the sprite about the frame's mid line
        let px = x as f32 + 0.5 - self.shear * (py - self.mid_y);
        let (hx, hy, hr) = self.head;
        if (px - hx).powi(2) + (py - hy).powi(2) <= hr * hr {
            return Some(0);
        }
        if let Some((x0, x1, y0, y1)) = self.arm {
            if px >= x0 && px < x1 && py >= y0 && py < y1 {
                return Some(0);
            }
        }
        let (half, t0, t1) = self.torso;
        if py >= t0 && py < t1 && (px - self.cx).abs() < half {
            return Some(1);
        }
        let (sep, leg_half, l0, l1) = self.legs;
        if py >= l0 && py < l1 && ((px - self.cx - sep).abs() < leg_half || (px - self.cx + sep).abs() < leg_half) {
            return Some(2);
        }
        None
    }
}

fn check_pose(pose_angle: f32) -> Result<()> {
    if !(0.0..2.0 * PI).contains(&pose_angle) {
        return Err(Error::validation(format!("pose_angle = {pose_angle} outside [0, 2π)")));
    }
    Ok(())
}

/// Unlit sprite and its foreground mask.
fn compose(identity: &IdentitySpec, illum: &IlluminationSpec, pose_angle: f32, rng_seed: u64, frame: FrameSize, texture: bool) -> Result<(ImageTensor, Vec<bool>)> {
    frame.validate()?;
    identity.validate()?;
    illum.validate()?;
    check_pose(pose_angle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let jitter = (rng.random_range(-1i32..=1) as f32, rng.random_range(-1i32..=1) as f32);
    let layout = Layout::new(identity, pose_angle, frame, jitter);
    let background = texture.then(|| value_noise(frame, 8, &mut rng));

    let mut img = ImageTensor::new(frame.height, frame.width);
    let mut mask = vec![false; frame.height * frame.width];
    for y in 0..frame.height {
        for x in 0..frame.width {
            let rgb = match layout.part_at(y, x) {
                Some(part) => {
                    mask[y * frame.width + x] = true;
                    identity.body_colors[part]
                }
                None => match &background {
                    Some(noise) => {
                        let v = noise[y * frame.width + x];
                        let bg = illum.background_color;
                        [0, 1, 2].map(|c| (bg[c] * (0.45 + 1.1 * v[c])).clamp(0.0, 1.0))
                    }
                    None => illum.background_color,
                },
            };
            img.set_pixel(y, x, rgb);
        }
    }
    Ok((img, mask))
}

fn light(img: &mut ImageTensor, illum: &IlluminationSpec) {
    for px in img.data_mut().chunks_mut(3) {
        let lit = illum.apply([px[0], px[1], px[2]]);
        px.copy_from_slice(&lit);
    }
}

/// Renders one still of `identity` under `illum`.
///
/// Foreground pixels under a neutral illumination carry the identity's base
/// colors exactly. The seed controls a ±1 pixel placement jitter.
pub fn render_person(identity: &IdentitySpec, illum: &IlluminationSpec, pose_angle: f32, rng_seed: u64, frame: FrameSize) -> Result<ImageTensor> {
    render_person_with_mask(identity, illum, pose_angle, rng_seed, frame).map(|(img, _)| img)
}

pub fn render_person_with_mask(identity: &IdentitySpec, illum: &IlluminationSpec, pose_angle: f32, rng_seed: u64, frame: FrameSize) -> Result<(ImageTensor, Vec<bool>)> {
    let (mut img, mask) = compose(identity, illum, pose_angle, rng_seed, frame, false)?;
    light(&mut img, illum);
    Ok((img, mask))
}

/// Renders a frame as a camera would capture it: textured background, blur
/// and sensor noise according to `gap`. With `RealnessGap::none()` the result
/// equals [`render_person`].
pub fn render_captured(identity: &IdentitySpec, illum: &IlluminationSpec, pose_angle: f32, rng_seed: u64, frame: FrameSize, gap: &RealnessGap) -> Result<ImageTensor> {
    gap.validate()?;
    let (mut img, _) = compose(identity, illum, pose_angle, rng_seed, frame, gap.texture)?;
    light(&mut img, illum);
    if gap.blur {
        img = box_blur3(&img);
    }
    if gap.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x6e6f_6973_655f_7631);
        let normal = Normal::new(0.0f32, gap.noise_sigma).expect("finite sigma");
        for v in img.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Smooth per-channel noise in [0,1] on a lattice with `cell`-pixel spacing.
fn value_noise(frame: FrameSize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    let gh = frame.height / cell + 2;
    let gw = frame.width / cell + 2;
    let lattice: Vec<[f32; 3]> = (0..gh * gw)
        .map(|_| {
            let shared: f32 = rng.random();
            [0, 1, 2].map(|_| (0.7 * shared + 0.3 * rng.random::<f32>()).clamp(0.0, 1.0))
        })
        .collect();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(frame.height * frame.width);
    for y in 0..frame.height {
        let fy = y as f32 / cell as f32;
        let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..frame.width {
            let fx = x as f32 / cell as f32;
            let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let (a, b, c, d) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
            out.push([0, 1, 2].map(|k| {
                let top = a[k] + (b[k] - a[k]) * tx;
                let bot = c[k] + (d[k] - c[k]) * tx;
                top + (bot - top) * ty
            }));
        }
    }
    out
}

/// 3×3 mean filter with edge replication.
pub fn box_blur3(img: &ImageTensor) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut out = ImageTensor::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let yy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    let xx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    let p = img.pixel(yy, xx);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            out.set_pixel(y, x, acc.map(|v| v / 9.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::specs::{sample_identities, sample_illumination_catalog};

    fn one_identity() -> IdentitySpec {
        sample_identities(1, 0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap().remove(0)
    }

    #[test]
    fn neutral_light_reproduces_base_colors_on_foreground() {
        let id = one_identity();
        let illum = IlluminationSpec::neutral(0, [0.5, 0.5, 0.5]);
        let (img, mask) = render_person_with_mask(&id, &illum, 0.4, 3, FrameSize::TOY).unwrap();
        let mut seen = [false; 3];
        for y in 0..64 {
            for x in 0..32 {
                if mask[y * 32 + x] {
                    let px = img.pixel(y, x);
                    let part = id.body_colors.iter().position(|c| *c == px).expect("foreground pixel is a base color");
                    seen[part] = true;
                } else {
                    assert_eq!(img.pixel(y, x), [0.5, 0.5, 0.5]);
                }
            }
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let id = one_identity();
        let illum = sample_illumination_catalog(1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().remove(0);
        let a = render_person(&id, &illum, 2.0, 77, FrameSize::TOY).unwrap();
        let b = render_person(&id, &illum, 2.0, 77, FrameSize::TOY).unwrap();
        assert_eq!(a.data(), b.data());
        let gap = RealnessGap::default();
        let c = render_captured(&id, &illum, 2.0, 77, FrameSize::TOY, &gap).unwrap();
        let d = render_captured(&id, &illum, 2.0, 77, FrameSize::TOY, &gap).unwrap();
        assert_eq!(c.data(), d.data());
    }

    #[test]
    fn different_illuminations_change_the_foreground() {
        let id = one_identity();
        let cat = sample_illumination_catalog(2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (a, mask) = render_person_with_mask(&id, &cat[0], 1.0, 5, FrameSize::TOY).unwrap();
        let b = render_person(&id, &cat[1], 1.0, 5, FrameSize::TOY).unwrap();
        let (mut diff, mut n) = (0.0f32, 0usize);
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for c in 0..3 {
                    diff += (a.data()[i * 3 + c] - b.data()[i * 3 + c]).abs();
                }
                n += 3;
            }
        }
        assert!(diff / n as f32 > 0.0);
    }

    #[test]
    fn pose_mirrors_the_visible_arm() {
        let id = one_identity();
        let illum = IlluminationSpec::neutral(0, [0.0; 3]);
        let (_, left) = render_person_with_mask(&id, &illum, 3.0 * PI / 2.0, 0, FrameSize::TOY).unwrap();
        let (_, right) = render_person_with_mask(&id, &illum, PI / 2.0, 0, FrameSize::TOY).unwrap();
        assert_ne!(left, right);
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        let id = one_identity();
        let illum = IlluminationSpec::neutral(0, [0.0; 3]);
        assert!(render_person(&id, &illum, 7.0, 0, FrameSize::TOY).is_err());
        assert!(render_person(&id, &illum, 0.0, 0, FrameSize { height: 8, width: 32 }).is_err());
        let mut bad = illum.clone();
        bad.channel_gain[0] = 2.5;
        let msg = render_person(&id, &bad, 0.0, 0, FrameSize::TOY).unwrap_err().to_string();
        assert!(msg.contains("channel_gain"));
    }

    #[test]
    fn zero_gap_matches_clean_render() {
        let id = one_identity();
        let illum = sample_illumination_catalog(1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap().remove(0);
        let clean = render_person(&id, &illum, 0.3, 9, FrameSize::TOY).unwrap();
        let cap = render_captured(&id, &illum, 0.3, 9, FrameSize::TOY, &RealnessGap::none()).unwrap();
        assert_eq!(clean, cap);
    }
}
