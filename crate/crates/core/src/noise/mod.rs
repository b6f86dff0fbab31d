//! Label-noise synthesis.
//!
//! [`symmetric_noise`] relabels an exact number of samples, each to a
//! uniformly chosen different class. [`small_cluster_noise`] repeatedly picks
//! a class, shatters it into small k-means clusters and merges every cluster
//! into some other surviving class, so the source class disappears from the
//! label universe (open-set noise).

pub mod kmeans;

use alloc::vec;
use alloc::vec::Vec;

use crate::numkit::{FeatureMatrix, SeededRng, Stream};
use crate::{Error, Result};

pub use kmeans::minibatch_kmeans;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    Symmetric,
    SmallCluster,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    /// Target noise fraction in `(0, 1)`.
    pub rate: f64,
    /// Mean samples per cluster for [`NoiseModel::SmallCluster`].
    pub z: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(model: NoiseModel, rate: f64, z: usize, seed: u64) -> Result<Self> {
        let spec = NoiseSpec {
            model,
            rate,
            z,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::OutOfRange {
                what: "noise rate",
                value: self.rate,
            });
        }
        if self.z == 0 {
            return Err(Error::OutOfRange {
                what: "samples per cluster",
                value: 0.0,
            });
        }
        Ok(())
    }

    /// Applies the configured model with a generator derived from `seed`.
    /// `features` is only read by the small-cluster model.
    pub fn apply(
        &self,
        features: &FeatureMatrix,
        labels: &[usize],
        num_classes: usize,
    ) -> Result<NoisyLabeling> {
        self.validate()?;
        let mut rng = SeededRng::for_stream(self.seed, Stream::Noise);
        match self.model {
            NoiseModel::Symmetric => symmetric_noise(labels, num_classes, self.rate, &mut rng),
            NoiseModel::SmallCluster => small_cluster_noise(features, labels, self, &mut rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisyLabeling {
    pub labels: Vec<usize>,
    /// Samples counted as corrupted by the synthesizer.
    pub corrupted_mask: Vec<bool>,
    pub original_labels: Vec<usize>,
}

impl NoisyLabeling {
    pub fn identity(labels: &[usize]) -> Self {
        NoisyLabeling {
            labels: labels.to_vec(),
            corrupted_mask: vec![false; labels.len()],
            original_labels: labels.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted_mask.iter().filter(|c| **c).count()
    }

    /// Samples whose label actually differs from the original. For the
    /// small-cluster model this can be lower than [`Self::corrupted_count`].
    pub fn changed_count(&self) -> usize {
        self.labels
            .iter()
            .zip(&self.original_labels)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn corrupted_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.corrupted_count() as f64 / self.len() as f64
        }
    }
}

/// Relabels exactly `round(rate·N)` distinct samples, each to a class drawn
/// uniformly from the other `num_classes − 1`.
pub fn symmetric_noise(
    labels: &[usize],
    num_classes: usize,
    rate: f64,
    rng: &mut SeededRng,
) -> Result<NoisyLabeling> {
    if num_classes < 2 {
        return Err(Error::NotEnoughClasses {
            needed: 2,
            found: num_classes,
        });
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::OutOfRange {
            what: "noise rate",
            value: rate,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::OutOfRange {
            what: "label",
            value: bad as f64,
        });
    }
    let n = labels.len();
    let count = (libm::round(rate * n as f64) as usize).min(n);
    let mut out = NoisyLabeling::identity(labels);
    for i in rng.sample_indices(n, count) {
        let mut new = rng.below(num_classes - 1);
        if new >= labels[i] {
            new += 1;
        }
        out.labels[i] = new;
        out.corrupted_mask[i] = true;
    }
    Ok(out)
}

fn nonempty_classes(labels: &[usize]) -> Vec<usize> {
    let max = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut present = vec![false; max];
    labels.iter().for_each(|&y| present[y] = true);
    (0..max).filter(|&c| present[c]).collect()
}

/// Small-cluster open-set noise.
///
/// While fewer than `rate·N` samples are marked misplaced: draw a nonempty
/// class `c` uniformly, split its current members into
/// `max(1, ⌊|X_c| / z⌋)` clusters with [`minibatch_kmeans`] on a forked
/// generator, and move each cluster (in order of its lowest sample index) to
/// a class drawn uniformly from the other nonempty classes. Every member of
/// `c` is marked misplaced, even one that lands back in its original class.
pub fn small_cluster_noise(
    features: &FeatureMatrix,
    labels: &[usize],
    spec: &NoiseSpec,
    rng: &mut SeededRng,
) -> Result<NoisyLabeling> {
    spec.validate()?;
    let n = labels.len();
    if features.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: features.rows(),
        });
    }
    let target = spec.rate * n as f64;
    let mut out = NoisyLabeling::identity(labels);
    let mut misplaced = 0usize;
    let batch = kmeans::DEFAULT_BATCH;
    while (misplaced as f64) < target {
        let nonempty = nonempty_classes(&out.labels);
        if nonempty.len() < 2 {
            return Err(Error::NoiseExhausted {
                achieved: misplaced as f64 / n as f64,
                requested: spec.rate,
            });
        }
        let c = nonempty[rng.below(nonempty.len())];
        let members: Vec<usize> = (0..n).filter(|&i| out.labels[i] == c).collect();
        let k = (members.len() / spec.z).max(1);
        let assign = minibatch_kmeans(
            &features.select_rows(&members),
            k,
            &mut rng.fork(),
            kmeans::DEFAULT_ITERS,
            batch.min(members.len()),
        )?;
        let others: Vec<usize> = nonempty.into_iter().filter(|&o| o != c).collect();
        // members are ascending, so first appearance orders clusters by lowest index
        let mut dest = vec![usize::MAX; k];
        for (&i, &cl) in members.iter().zip(&assign) {
            if dest[cl] == usize::MAX {
                dest[cl] = others[rng.below(others.len())];
            }
            out.labels[i] = dest[cl];
        }
        for &i in &members {
            if !out.corrupted_mask[i] {
                out.corrupted_mask[i] = true;
                misplaced += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blocks(classes: usize, per: usize) -> Vec<usize> {
        (0..classes * per).map(|i| i / per).collect()
    }

    #[test]
    fn symmetric_exact_count() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let out = symmetric_noise(&labels, 10, 0.2, &mut SeededRng::new(3)).unwrap();
        assert_eq!(out.corrupted_count(), 20);
        assert_eq!(out.changed_count(), 20);
        for i in 0..100 {
            assert_eq!(out.corrupted_mask[i], out.labels[i] != labels[i]);
            assert!(out.labels[i] < 10);
        }
    }

    #[test]
    fn symmetric_tiny_rate_is_identity() {
        let labels = blocks(4, 10);
        let out = symmetric_noise(&labels, 4, 0.01, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out, NoisyLabeling::identity(&labels));
    }

    #[test]
    fn symmetric_needs_two_classes() {
        assert!(symmetric_noise(&[0, 0, 0], 1, 0.5, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn symmetric_destinations_uniform() {
        // source class 0, 5 classes: destinations 1..5 each with prob 1/4
        let labels = blocks(5, 20);
        let mut hist = [0f64; 5];
        for seed in 0..1000 {
            let out = symmetric_noise(&labels, 5, 0.3, &mut SeededRng::new(seed)).unwrap();
            for i in 0..20 {
                if out.corrupted_mask[i] {
                    hist[out.labels[i]] += 1.0;
                }
            }
        }
        assert_eq!(hist[0], 0.0);
        let total: f64 = hist.iter().sum();
        let expected = total / 4.0;
        let chi2: f64 = hist[1..].iter().map(|o| (o - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, p = 0.01
        assert!(chi2 < 11.345, "chi2 {chi2}");
    }

    /// Three classes of four points, each class two tight, far-apart pairs.
    fn toy() -> (FeatureMatrix, Vec<usize>) {
        let mut rows = Vec::new();
        for c in 0..3 {
            let a = c as f64 * 1.1;
            for pair in 0..2 {
                let ang = a + pair as f64 * core::f64::consts::PI;
                for jitter in [0.0, 0.01] {
                    rows.push([libm::cos(ang + jitter), libm::sin(ang + jitter)]);
                }
            }
        }
        (FeatureMatrix::from_rows(2, rows).unwrap(), blocks(3, 4))
    }

    #[test]
    fn small_cluster_toy_trace() {
        let (x, labels) = toy();
        let spec = NoiseSpec::new(NoiseModel::SmallCluster, 0.25, 2, 0).unwrap();
        let out = spec.apply(&x, &labels, 3).unwrap();

        // replay the draw protocol by hand
        let mut rng = SeededRng::for_stream(0, Stream::Noise);
        let c = rng.below(3);
        let _ = rng.fork();
        let others: Vec<usize> = (0..3).filter(|&o| o != c).collect();
        let first = others[rng.below(2)];
        let second = others[rng.below(2)];
        let mut expected = labels.clone();
        expected[4 * c] = first;
        expected[4 * c + 1] = first;
        expected[4 * c + 2] = second;
        expected[4 * c + 3] = second;

        assert_eq!(out.labels, expected);
        assert_eq!(out.corrupted_count(), 4);
        for i in 0..12 {
            assert_eq!(out.corrupted_mask[i], labels[i] == c);
        }
        assert!(!out.labels.contains(&c));
        // frozen from the first run
        assert_eq!(out.labels, FROZEN_TOY);
    }

    const FROZEN_TOY: [usize; 12] = [0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1];

    #[test]
    fn small_cluster_exit_bound_and_determinism() {
        let mut rng = SeededRng::new(11);
        let labels = blocks(20, 10);
        let x = FeatureMatrix::from_vec(200, 4, (0..800).map(|_| rng.gaussian()).collect()).unwrap();
        for rate in [0.1, 0.25, 0.5] {
            let spec = NoiseSpec::new(NoiseModel::SmallCluster, rate, 2, 7).unwrap();
            let a = spec.apply(&x, &labels, 20).unwrap();
            let b = spec.apply(&x, &labels, 20).unwrap();
            assert_eq!(a, b);
            let need = libm::ceil(rate * 200.0) as usize;
            let got = a.corrupted_count();
            assert!(got >= need);
            // merges can grow a class past its original size, so bound by
            // the largest class size the run produced at any time
            assert!(got <= need + 200 - 1);
        }
    }

    #[test]
    fn small_cluster_exhaustion_reports_progress() {
        let (x, labels) = toy();
        let spec = NoiseSpec::new(NoiseModel::SmallCluster, 0.99, 2, 0).unwrap();
        match spec.apply(&x, &labels, 3) {
            Err(Error::NoiseExhausted { achieved, requested }) => {
                assert!(achieved > 0.0 && achieved < 0.99);
                assert_eq!(requested, 0.99);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn small_cluster_invariants(seed in any::<u64>(), rate in 0.05f64..0.6) {
            let mut rng = SeededRng::new(seed);
            let labels = blocks(10, 8);
            let x = FeatureMatrix::from_vec(80, 3, (0..240).map(|_| rng.gaussian()).collect()).unwrap();
            let spec = NoiseSpec::new(NoiseModel::SmallCluster, rate, 2, seed).unwrap();
            let mut r = SeededRng::for_stream(seed, Stream::Noise);
            let out = small_cluster_noise(&x, &labels, &spec, &mut r).unwrap();
            prop_assert_eq!(out.len(), 80);
            prop_assert_eq!(&out.original_labels, &labels);
            let need = libm::ceil(rate * 80.0) as usize;
            prop_assert!(out.corrupted_count() >= need);
            // a source class is either fully misplaced or never drawn
            let emptied: Vec<usize> = (0..10).filter(|c| !out.labels.contains(c)).collect();
            for c in 0..10 {
                let members: Vec<bool> = (0..80).filter(|&i| labels[i] == c).map(|i| out.corrupted_mask[i]).collect();
                if emptied.contains(&c) {
                    prop_assert!(members.iter().all(|m| *m));
                }
            }
            // nothing is ever moved into an emptied class
            for &y in &out.labels {
                prop_assert!(!emptied.contains(&y));
            }
        }

        #[test]
        fn symmetric_invariants(seed in any::<u64>(), rate in 0.0f64..1.0, classes in 2usize..8) {
            let labels: Vec<usize> = (0..57).map(|i| i % classes).collect();
            let out = symmetric_noise(&labels, classes, rate, &mut SeededRng::new(seed)).unwrap();
            prop_assert_eq!(out.corrupted_count(), libm::round(rate * 57.0) as usize);
            prop_assert_eq!(out.changed_count(), out.corrupted_count());
            prop_assert!(out.labels.iter().all(|&y| y < classes));
        }
    }
}
