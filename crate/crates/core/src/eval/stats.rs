use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth_data::Dataset;

pub const HISTOGRAM_BINS: usize = 64;

/// Normalized per-channel intensity histograms over [0,1] and a luminance
/// gradient-magnitude histogram over [0, √2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub intensity_histogram: [Vec<f64>; 3],
    pub gradient_magnitude_histogram: Vec<f64>,
}

fn bin(v: f64, max: f64) -> usize {
    ((v / max * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

fn normalize(counts: Vec<u64>) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Histograms over every pixel of every image; gradients are forward differences
/// of luminance on pixels that have a right and a lower neighbor.
pub fn image_stats(dataset: &Dataset) -> Result<ImageStats> {
    if dataset.is_empty() {
        return Err(Error::validation(format!("dataset {} is empty", dataset.name)));
    }
    if dataset.height < 2 || dataset.width < 2 {
        return Err(Error::validation("image statistics need at least 2×2 images"));
    }
    let mut intensity = [vec![0u64; HISTOGRAM_BINS], vec![0u64; HISTOGRAM_BINS], vec![0u64; HISTOGRAM_BINS]];
    let mut gradient = vec![0u64; HISTOGRAM_BINS];
    let (h, w) = (dataset.height, dataset.width);
    for s in &dataset.samples {
        let d = s.image.data();
        let mut lum = Vec::with_capacity(h * w);
        for px in d.chunks(3) {
            for (c, hist) in intensity.iter_mut().enumerate() {
                hist[bin(px[c] as f64, 1.0)] += 1;
            }
            lum.push(0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64);
        }
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let l = lum[y * w + x];
                let gx = lum[y * w + x + 1] - l;
                let gy = lum[(y + 1) * w + x] - l;
                gradient[bin((gx * gx + gy * gy).sqrt(), std::f64::consts::SQRT_2)] += 1;
            }
        }
    }
    Ok(ImageStats { intensity_histogram: intensity.map(normalize), gradient_magnitude_histogram: normalize(gradient) })
}

/// Symmetric χ² distance `Σ (a−b)² / (a+b)` summed over all four histograms; empty bins are skipped.
pub fn stats_distance(a: &ImageStats, b: &ImageStats) -> f64 {
    let chi = |p: &[f64], q: &[f64]| p.iter().zip(q).filter(|(x, y)| *x + *y > 0.0).map(|(x, y)| (x - y) * (x - y) / (x + y)).sum::<f64>();
    (0..3).map(|c| chi(&a.intensity_histogram[c], &b.intensity_histogram[c])).sum::<f64>() + chi(&a.gradient_magnitude_histogram, &b.gradient_magnitude_histogram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;
    use crate::synth_data::{Origin, Sample};
    use proptest::prelude::*;

    fn dataset(images: Vec<ImageTensor>) -> Dataset {
        let (h, w) = (images[0].height(), images[0].width());
        let samples = images
            .into_iter()
            .enumerate()
            .map(|(i, image)| Sample { image, identity_id: 0, domain_id: 0, origin: Origin::Synthetic, path: format!("{i}.png") })
            .collect();
        Dataset { name: "t".into(), height: h, width: w, samples }
    }

    fn noise(seed: u64) -> ImageTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_raw(6, 5, (0..90).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn constant_images_concentrate_in_one_bin() {
        let st = image_stats(&dataset(vec![ImageTensor::filled(8, 8, [0.3, 0.6, 0.9]); 2])).unwrap();
        for hist in &st.intensity_histogram {
            assert_eq!(hist.iter().filter(|&&v| v > 0.0).count(), 1);
        }
        assert_eq!(st.gradient_magnitude_histogram[0], 1.0);
        assert_eq!(st.intensity_histogram[2][bin(0.9f32 as f64, 1.0)], 1.0);
    }

    #[test]
    fn histograms_are_normalized_and_stable() {
        let ds = dataset(vec![noise(1), noise(2)]);
        let st = image_stats(&ds).unwrap();
        for hist in st.intensity_histogram.iter().chain(std::iter::once(&st.gradient_magnitude_histogram)) {
            assert!((hist.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        assert_eq!(st, image_stats(&ds).unwrap());
        assert_eq!(stats_distance(&st, &st), 0.0);
    }

    proptest! {
        #[test]
        fn distance_is_a_symmetric_nonnegative_pseudometric(a in any::<u64>(), b in any::<u64>()) {
            let sa = image_stats(&dataset(vec![noise(a)])).unwrap();
            let sb = image_stats(&dataset(vec![noise(b)])).unwrap();
            let d = stats_distance(&sa, &sb);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, stats_distance(&sb, &sa));
            if a == b { prop_assert_eq!(d, 0.0); }
        }
    }
}
