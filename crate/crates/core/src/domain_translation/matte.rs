use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default matte widths as fractions of (height, width).
pub const DEFAULT_SIGMA_FRAC: (f64, f64) = (1.0 / 3.0, 1.0 / 4.0);

/// Center-peaked Gaussian weight map over the image plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMatte {
    pub height: usize,
    pub width: usize,
    /// (row, column) of the peak
    pub center: (f64, f64),
    /// (vertical, horizontal) standard deviations in pixels
    pub sigmas: (f64, f64),
    /// row-major H×W values in (0,1]
    pub values: Vec<f64>,
}

/// Builds the matte with σ = `sigma_frac` × (H, W), peaked on the pixel at (H/2, W/2).
pub fn make_soft_matte(height: usize, width: usize, sigma_frac: (f64, f64)) -> Result<SoftMatte> {
    if height < 8 || width < 8 {
        return Err(Error::validation(format!("soft matte needs at least 8×8 pixels, got {height}×{width}")));
    }
    let (fu, fv) = sigma_frac;
    if !(fu > 0.0 && fu.is_finite() && fv > 0.0 && fv.is_finite()) {
        return Err(Error::validation(format!("soft matte sigmas must be positive, got ({fu}, {fv})")));
    }
    let sigmas = (fu * height as f64, fv * width as f64);
    let center = ((height / 2) as f64, (width / 2) as f64);
    let mut values = Vec::with_capacity(height * width);
    for u in 0..height {
        for v in 0..width {
            let du = u as f64 - center.0;
            let dv = v as f64 - center.1;
            values.push((-(du * du / (2.0 * sigmas.0 * sigmas.0) + dv * dv / (2.0 * sigmas.1 * sigmas.1))).exp());
        }
    }
    Ok(SoftMatte { height, width, center, sigmas, values })
}

impl SoftMatte {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.width + v]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_and_one_sigma_values() {
        let m = make_soft_matte(64, 32, DEFAULT_SIGMA_FRAC).unwrap();
        assert_eq!(m.at(32, 16), 1.0);
        let off = make_soft_matte(30, 30, (0.2, 0.2)).unwrap();
        // σu = 6 pixels
        assert!((off.at(15 + 6, 15) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn corner_below_edge_midpoint_below_center() {
        for frac in [(0.1, 0.1), (1.0 / 3.0, 0.25), (2.0, 3.0)] {
            let m = make_soft_matte(20, 12, frac).unwrap();
            let corner = m.at(0, 0);
            let edge = m.at(0, 6);
            assert!(corner < edge && edge < m.at(10, 6), "{frac:?}");
            assert!(m.values.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn strictly_decreasing_along_axes() {
        let m = make_soft_matte(16, 10, DEFAULT_SIGMA_FRAC).unwrap();
        for u in 8..15 {
            assert!(m.at(u + 1, 5) < m.at(u, 5));
        }
        for v in 1..5 {
            assert!(m.at(8, v - 1) < m.at(8, v));
        }
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(make_soft_matte(64, 32, (0.0, 0.25)).is_err());
        assert!(make_soft_matte(64, 32, (0.3, -1.0)).is_err());
        assert!(make_soft_matte(7, 32, DEFAULT_SIGMA_FRAC).is_err());
    }
}
