use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body proportions as fractions of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyGeometry {
    /// torso width / frame width
    pub torso_width: f32,
    /// torso height / frame height
    pub torso_height: f32,
    /// head radius / frame width
    pub head_radius: f32,
    /// single leg width / frame width
    pub leg_width: f32,
}

/// One virtual person: head (skin), torso and leg colors plus proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub identity_id: u32,
    /// head, torso, legs
    pub body_colors: [[f32; 3]; 3],
    pub body_geometry: BodyGeometry,
}

impl IdentitySpec {
    pub fn validate(&self) -> Result<()> {
        for (part, rgb) in ["head", "torso", "legs"].iter().zip(&self.body_colors) {
            if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::validation(format!(
                    "identity {}: body_colors.{part} = {rgb:?} outside [0,1]",
                    self.identity_id
                )));
            }
        }
        let g = &self.body_geometry;
        for (name, v) in [
            ("torso_width", g.torso_width),
            ("torso_height", g.torso_height),
            ("head_radius", g.head_radius),
            ("leg_width", g.leg_width),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::validation(format!(
                    "identity {}: body_geometry.{name} = {v} outside (0,1)",
                    self.identity_id
                )));
            }
        }
        Ok(())
    }

    /// Concatenated head/torso/legs colors.
    pub fn color_vector(&self) -> [f32; 9] {
        let mut v = [0.0; 9];
        for (i, rgb) in self.body_colors.iter().enumerate() {
            v[i * 3..i * 3 + 3].copy_from_slice(rgb);
        }
        v
    }

    pub fn color_distance(&self, other: &IdentitySpec) -> f32 {
        l2(&self.color_vector(), &other.color_vector())
    }
}

/// Parametric lighting condition: per-channel affine response followed by a gamma curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationSpec {
    pub illum_id: u32,
    pub channel_gain: [f32; 3],
    pub channel_bias: [f32; 3],
    pub gamma: f32,
    pub background_color: [f32; 3],
}

impl IlluminationSpec {
    /// Gain 1, bias 0, gamma 1.
    pub fn neutral(illum_id: u32, background_color: [f32; 3]) -> Self {
        IlluminationSpec { illum_id, channel_gain: [1.0; 3], channel_bias: [0.0; 3], gamma: 1.0, background_color }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: String| Err(Error::validation(format!("illumination {}: {field} = {v} out of range", self.illum_id)));
        if self.channel_gain.iter().any(|g| !(0.2..=1.8).contains(g)) {
            return bad("channel_gain", format!("{:?}", self.channel_gain));
        }
        if self.channel_bias.iter().any(|b| !(-0.2..=0.2).contains(b)) {
            return bad("channel_bias", format!("{:?}", self.channel_bias));
        }
        if !(0.5..=2.0).contains(&self.gamma) {
            return bad("gamma", self.gamma.to_string());
        }
        if self.background_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background_color", format!("{:?}", self.background_color));
        }
        Ok(())
    }

    /// clamp(gain ⊙ v + bias)^gamma on one pixel.
    #[inline]
    pub fn apply(&self, rgb: [f32; 3]) -> [f32; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            let lin = (self.channel_gain[c] * rgb[c] + self.channel_bias[c]).clamp(0.0, 1.0);
            out[c] = if self.gamma == 1.0 { lin } else { lin.powf(self.gamma) };
        }
        out
    }

    /// gain, bias, gamma, background as one vector.
    pub fn param_vector(&self) -> [f32; 10] {
        let mut v = [0.0; 10];
        v[..3].copy_from_slice(&self.channel_gain);
        v[3..6].copy_from_slice(&self.channel_bias);
        v[6] = self.gamma;
        v[7..].copy_from_slice(&self.background_color);
        v
    }

    pub fn param_distance(&self, other: &IlluminationSpec) -> f32 {
        l2(&self.param_vector(), &other.param_vector())
    }

    pub fn same_parameters(&self, other: &IlluminationSpec) -> bool {
        self.param_distance(other) < 1e-6
    }
}

fn l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

pub const MIN_IDENTITY_COLOR_DISTANCE: f32 = 0.15;

/// Rejection-samples identities whose color vectors are pairwise at least
/// [`MIN_IDENTITY_COLOR_DISTANCE`] apart.
pub fn sample_identities<R: Rng>(count: usize, first_id: u32, rng: &mut R) -> Result<Vec<IdentitySpec>> {
    let mut out: Vec<IdentitySpec> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 10_000 * count.max(1) {
            return Err(Error::validation(format!("could not place {count} identities with color separation {MIN_IDENTITY_COLOR_DISTANCE}")));
        }
        let mut colors = [[0.0f32; 3]; 3];
        for part in &mut colors {
            for c in part.iter_mut() {
                *c = rng.random_range(0.05..0.95);
            }
        }
        let cand = IdentitySpec {
            identity_id: first_id + out.len() as u32,
            body_colors: colors,
            body_geometry: BodyGeometry {
                torso_width: rng.random_range(0.38..0.52),
                torso_height: rng.random_range(0.30..0.36),
                head_radius: rng.random_range(0.11..0.15),
                leg_width: rng.random_range(0.13..0.18),
            },
        };
        if out.iter().all(|o| o.color_distance(&cand) >= MIN_IDENTITY_COLOR_DISTANCE) {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Pairwise separation between catalog entries in parameter space.
pub const MIN_ILLUMINATION_DISTANCE: f32 = 0.45;

fn random_illumination<R: Rng>(illum_id: u32, rng: &mut R) -> IlluminationSpec {
    let mut gain = [0.0; 3];
    let mut bias = [0.0; 3];
    let mut bg = [0.0; 3];
    // a shared brightness factor keeps most conditions plausibly colored
    let level: f32 = rng.random_range(0.55..1.45);
    for c in 0..3 {
        gain[c] = (level * rng.random_range(0.75..1.25f32)).clamp(0.3, 1.7);
        bias[c] = rng.random_range(-0.12..0.12);
        bg[c] = rng.random_range(0.1..0.9);
    }
    IlluminationSpec { illum_id, channel_gain: gain, channel_bias: bias, gamma: rng.random_range(0.6..1.7), background_color: bg }
}

/// Synthetic illumination catalog with ids `0..n`.
pub fn sample_illumination_catalog<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<IlluminationSpec>> {
    let mut out: Vec<IlluminationSpec> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 10_000 * n.max(1) {
            return Err(Error::validation(format!("could not place {n} illuminations with separation {MIN_ILLUMINATION_DISTANCE}")));
        }
        let cand = random_illumination(out.len() as u32, rng);
        if out.iter().all(|o| o.param_distance(&cand) >= MIN_ILLUMINATION_DISTANCE) {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Index of the catalog entry nearest to `illum` in parameter space (first on ties).
pub fn nearest_in_catalog(catalog: &[IlluminationSpec], illum: &IlluminationSpec) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, c) in catalog.iter().enumerate() {
        let d = c.param_distance(illum);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// A new illumination whose nearest catalog entry is `anchor`: the anchor's
/// parameters perturbed by `spread` (relative to the catalog separation).
pub fn held_out_near<R: Rng>(catalog: &[IlluminationSpec], anchor: usize, illum_id: u32, spread: f32, rng: &mut R) -> Result<IlluminationSpec> {
    if anchor >= catalog.len() {
        return Err(Error::validation(format!("anchor {anchor} outside catalog of {}", catalog.len())));
    }
    let base = &catalog[anchor];
    for _ in 0..10_000 {
        let mut cand = base.clone();
        cand.illum_id = illum_id;
        let mut jitter = |v: f32, lo: f32, hi: f32, scale: f32| (v + rng.random_range(-1.0..1.0f32) * scale * spread).clamp(lo, hi);
        for c in 0..3 {
            cand.channel_gain[c] = jitter(cand.channel_gain[c], 0.2, 1.8, 0.15);
            cand.channel_bias[c] = jitter(cand.channel_bias[c], -0.2, 0.2, 0.05);
            cand.background_color[c] = jitter(cand.background_color[c], 0.0, 1.0, 0.15);
        }
        cand.gamma = jitter(cand.gamma, 0.5, 2.0, 0.15);
        let d = cand.param_distance(base);
        if d > 1e-3 && nearest_in_catalog(catalog, &cand) == Some(anchor) {
            return Ok(cand);
        }
    }
    Err(Error::validation(format!("no held-out illumination found near catalog entry {anchor}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_identities_are_separated_and_valid() {
        let ids = sample_identities(40, 100, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(ids.len(), 40);
        for (i, a) in ids.iter().enumerate() {
            a.validate().unwrap();
            assert_eq!(a.identity_id, 100 + i as u32);
            for b in &ids[i + 1..] {
                assert!(a.color_distance(b) >= MIN_IDENTITY_COLOR_DISTANCE);
            }
        }
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut id = sample_identities(1, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().remove(0);
        id.body_geometry.leg_width = 1.2;
        let msg = id.validate().unwrap_err().to_string();
        assert!(msg.contains("leg_width"), "{msg}");

        let mut il = IlluminationSpec::neutral(0, [0.5; 3]);
        il.gamma = 3.0;
        assert!(il.validate().unwrap_err().to_string().contains("gamma"));
        il.gamma = 1.0;
        il.channel_bias[1] = 0.5;
        assert!(il.validate().unwrap_err().to_string().contains("channel_bias"));
    }

    #[test]
    fn catalog_entries_are_valid_and_separated() {
        let cat = sample_illumination_catalog(12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (i, a) in cat.iter().enumerate() {
            a.validate().unwrap();
            assert_eq!(a.illum_id, i as u32);
            for b in &cat[i + 1..] {
                assert!(a.param_distance(b) >= MIN_ILLUMINATION_DISTANCE);
            }
        }
    }

    #[test]
    fn held_out_illumination_is_nearest_to_its_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cat = sample_illumination_catalog(12, &mut rng).unwrap();
        for anchor in 0..12 {
            let h = held_out_near(&cat, anchor, 500, 1.0, &mut rng).unwrap();
            h.validate().unwrap();
            assert_eq!(nearest_in_catalog(&cat, &h), Some(anchor));
            assert!(!cat.iter().any(|c| c.same_parameters(&h)));
        }
    }

    #[test]
    fn neutral_illumination_is_identity() {
        let il = IlluminationSpec::neutral(0, [0.0; 3]);
        assert_eq!(il.apply([0.1, 0.5, 0.9]), [0.1, 0.5, 0.9]);
    }
}
