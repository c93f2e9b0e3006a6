use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reid_model::FeatureExtractor;
use crate::scalar::Scalar;
use crate::synth_data::Dataset;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::validation(format!("unknown metric `{other}` (expected cosine or euclidean)"))),
        }
    }

    /// Larger is more similar.
    fn similarity(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot / (na * nb)
                }
            }
            Metric::Euclidean => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

/// Single-shot protocol: one probe and one gallery entry per identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGallerySplit {
    pub probe: Vec<(Vec<f64>, u32)>,
    pub gallery: Vec<(Vec<f64>, u32)>,
    pub seed: u64,
}

impl ProbeGallerySplit {
    pub fn validate(&self) -> Result<()> {
        let gallery_ids: BTreeSet<u32> = self.gallery.iter().map(|g| g.1).collect();
        if gallery_ids.len() != self.gallery.len() {
            return Err(Error::validation("gallery identities must be unique"));
        }
        if let Some(p) = self.probe.iter().find(|p| !gallery_ids.contains(&p.1)) {
            return Err(Error::validation(format!("probe identity {} has no gallery entry", p.1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `accuracies[r]`: share of probes whose match ranks within the top r+1
    pub accuracies: Vec<f64>,
    pub n_probes: usize,
}

impl CmcCurve {
    pub fn rank1(&self) -> f64 {
        self.accuracies.first().copied().unwrap_or(f64::NAN)
    }
}

/// Ranks the gallery for every probe. Equal similarities are ordered by gallery index.
pub fn cmc(split: &ProbeGallerySplit, metric: Metric) -> Result<CmcCurve> {
    split.validate()?;
    if split.probe.is_empty() {
        return Err(Error::validation("cmc needs at least one probe"));
    }
    let dim = split.gallery[0].0.len();
    if let Some(bad) = split.probe.iter().chain(&split.gallery).find(|v| v.0.len() != dim) {
        return Err(Error::validation(format!("feature of identity {} has {} components, expected {dim}", bad.1, bad.0.len())));
    }
    let mut hits_at = vec![0usize; split.gallery.len()];
    for (feat, id) in &split.probe {
        let sims: Vec<f64> = split.gallery.iter().map(|g| metric.similarity(feat, &g.0)).collect();
        let t = split.gallery.iter().position(|g| g.1 == *id).expect("validated");
        let rank = sims.iter().enumerate().filter(|&(j, &s)| s > sims[t] || (s == sims[t] && j < t)).count();
        hits_at[rank] += 1;
    }
    let n = split.probe.len() as f64;
    let mut acc = Vec::with_capacity(hits_at.len());
    let mut cum = 0;
    for h in hits_at {
        cum += h;
        acc.push(cum as f64 / n);
    }
    Ok(CmcCurve { accuracies: acc, n_probes: split.probe.len() })
}

/// Sample indices chosen for a single-shot split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleShotSelection {
    pub identities: Vec<u32>,
    pub probe: Vec<usize>,
    pub gallery: Vec<usize>,
}

/// Picks one seeded image per shared identity from each camera.
pub fn select_single_shot(probe_camera: &Dataset, gallery_camera: &Dataset, seed: u64) -> Result<SingleShotSelection> {
    let (p_ids, g_ids) = (probe_camera.identity_ids(), gallery_camera.identity_ids());
    let only: Vec<u32> = p_ids.symmetric_difference(&g_ids).copied().collect();
    if !only.is_empty() {
        return Err(Error::validation(format!("identities present in only one camera: {only:?}")));
    }
    if p_ids.is_empty() {
        return Err(Error::validation("cameras have no identities"));
    }
    let group = |ds: &Dataset| {
        let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in ds.samples.iter().enumerate() {
            m.entry(s.identity_id).or_default().push(i);
        }
        m
    };
    let (pg, gg) = (group(probe_camera), group(gallery_camera));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "single-shot"));
    let identities: Vec<u32> = p_ids.into_iter().collect();
    let mut probe = Vec::with_capacity(identities.len());
    let mut gallery = Vec::with_capacity(identities.len());
    for id in &identities {
        probe.push(*pg[id].choose(&mut rng).expect("non-empty group"));
        gallery.push(*gg[id].choose(&mut rng).expect("non-empty group"));
    }
    Ok(SingleShotSelection { identities, probe, gallery })
}

/// Single-shot split of two cameras, embedded with `model`.
pub fn make_split<T: Scalar>(model: &FeatureExtractor<T>, probe_camera: &Dataset, gallery_camera: &Dataset, seed: u64) -> Result<ProbeGallerySplit> {
    let sel = select_single_shot(probe_camera, gallery_camera, seed)?;
    let embed = |ds: &Dataset, idx: &[usize]| -> Result<Vec<(Vec<f64>, u32)>> {
        let images: Vec<_> = idx.iter().map(|&i| &ds.samples[i].image).collect();
        let feats = model.extract_features(&images)?;
        Ok(feats.into_iter().zip(idx).map(|(f, &i)| (f.into_iter().map(|v| v.as_f64()).collect(), ds.samples[i].identity_id)).collect())
    };
    Ok(ProbeGallerySplit { probe: embed(probe_camera, &sel.probe)?, gallery: embed(gallery_camera, &sel.gallery)?, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth_data::{generate_domain, sample_identities, sample_illumination_catalog, FrameSize};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Sort the gallery by (−similarity, index) and read off the match position.
    fn oracle(sim: &[Vec<f64>], truth: &[usize]) -> Vec<f64> {
        let g = sim[0].len();
        let mut counts = vec![0usize; g];
        for (p, row) in sim.iter().enumerate() {
            let mut order: Vec<usize> = (0..g).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            let pos = order.iter().position(|&j| j == truth[p]).unwrap();
            for c in counts.iter_mut().skip(pos) {
                *c += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / sim.len() as f64).collect()
    }

    /// Gallery entry j is the j-th unit vector, so a probe's cosine similarities are its own coordinates.
    fn split_from_similarities(sim: &[Vec<f64>], truth: &[usize]) -> ProbeGallerySplit {
        let g = sim[0].len();
        let gallery = (0..g).map(|j| ((0..g).map(|k| if k == j { 1.0 } else { 0.0 }).collect(), j as u32)).collect();
        let probe = sim
            .iter()
            .zip(truth)
            .map(|(row, &t)| {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                (row.iter().map(|v| v / norm).collect(), t as u32)
            })
            .collect();
        ProbeGallerySplit { probe, gallery, seed: 0 }
    }

    #[test]
    fn perfect_features_give_rank1_of_one() {
        let split = split_from_similarities(&(0..5).map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect::<Vec<_>>(), &[0, 1, 2, 3, 4]);
        let c = cmc(&split, Metric::Cosine).unwrap();
        assert_eq!(c.rank1(), 1.0);
        assert_eq!(c.accuracies, vec![1.0; 5]);
    }

    #[test]
    fn random_features_rank1_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gallery: Vec<(Vec<f64>, u32)> = (0..10).map(|j| ((0..8).map(|_| rng.random_range(-1.0..1.0)).collect(), j)).collect();
        let probe: Vec<(Vec<f64>, u32)> = (0..1000).map(|i| ((0..8).map(|_| rng.random_range(-1.0..1.0)).collect(), (i % 10) as u32)).collect();
        let c = cmc(&ProbeGallerySplit { probe, gallery, seed: 0 }, Metric::Cosine).unwrap();
        assert!((c.rank1() - 0.1).abs() <= 0.05, "{}", c.rank1());
    }

    #[test]
    fn ties_are_broken_by_gallery_index() {
        let gallery = vec![(vec![1.0, 0.0], 7), (vec![1.0, 0.0], 3)];
        let probe = vec![(vec![1.0, 0.0], 3)];
        let c = cmc(&ProbeGallerySplit { probe, gallery, seed: 0 }, Metric::Euclidean).unwrap();
        assert_eq!(c.accuracies, vec![0.0, 1.0]);
    }

    #[test]
    fn malformed_splits_are_rejected() {
        let bad_dim = ProbeGallerySplit { probe: vec![(vec![1.0], 0)], gallery: vec![(vec![1.0, 0.0], 0)], seed: 0 };
        assert!(cmc(&bad_dim, Metric::Cosine).is_err());
        let missing = ProbeGallerySplit { probe: vec![(vec![1.0], 5)], gallery: vec![(vec![1.0], 0)], seed: 0 };
        assert!(cmc(&missing, Metric::Cosine).is_err());
        let dup = ProbeGallerySplit { probe: vec![(vec![1.0], 0)], gallery: vec![(vec![1.0], 0), (vec![0.5], 0)], seed: 0 };
        assert!(cmc(&dup, Metric::Cosine).is_err());
    }

    #[test]
    fn single_shot_selection_counts_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = FrameSize { height: 16, width: 16 };
        let cat = sample_illumination_catalog(2, &mut rng).unwrap();
        let ids = sample_identities(20, 0, &mut rng).unwrap();
        let a = generate_domain(&ids, &cat[0], 2, 1, frame).unwrap();
        let b = generate_domain(&ids, &cat[1], 2, 2, frame).unwrap();
        let s1 = select_single_shot(&a, &b, 4).unwrap();
        assert_eq!((s1.probe.len(), s1.gallery.len()), (20, 20));
        assert_eq!(s1, select_single_shot(&a, &b, 4).unwrap());
        let fewer = generate_domain(&ids[..19], &cat[1], 2, 2, frame).unwrap();
        let err = select_single_shot(&a, &fewer, 4).unwrap_err().to_string();
        assert!(err.contains("19"), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn cmc_matches_brute_force_ranking(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // distinct similarities: a shuffled grid of well separated positive values per row
            let sim: Vec<Vec<f64>> = (0..10).map(|_| {
                let mut row: Vec<f64> = (1..=10).map(|k| k as f64 + rng.random_range(0.0..0.5)).collect();
                row.shuffle(&mut rng);
                row
            }).collect();
            let mut truth: Vec<usize> = (0..10).collect();
            truth.shuffle(&mut rng);
            let c = cmc(&split_from_similarities(&sim, &truth), Metric::Cosine).unwrap();
            prop_assert_eq!(&c.accuracies, &oracle(&sim, &truth));
            prop_assert!(c.accuracies.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*c.accuracies.last().unwrap(), 1.0);
        }

        #[test]
        fn cmc_is_invariant_to_gallery_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gallery: Vec<(Vec<f64>, u32)> = (0..8).map(|j| ((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), j)).collect();
            let probe: Vec<(Vec<f64>, u32)> = (0..8).map(|j| ((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), j)).collect();
            let mut shuffled = gallery.clone();
            shuffled.shuffle(&mut rng);
            let a = cmc(&ProbeGallerySplit { probe: probe.clone(), gallery, seed: 0 }, Metric::Euclidean).unwrap();
            let b = cmc(&ProbeGallerySplit { probe, gallery: shuffled, seed: 0 }, Metric::Euclidean).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
