//! Class-balanced batches: `P` distinct classes, `K` samples from each.

use alloc::vec::Vec;

use crate::numkit::SeededRng;
use crate::{Error, Result};

/// Per-class member lists built once from a label vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkSampler {
    members: Vec<Vec<usize>>,
    nonempty: Vec<usize>,
    p: usize,
    k: usize,
}

impl PkSampler {
    pub fn new(labels: &[usize], p: usize, k: usize) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::Invalid(alloc::format!("P and K must be positive, got P={p} K={k}")));
        }
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut members = alloc::vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            members[y].push(i);
        }
        let nonempty: Vec<usize> = (0..classes).filter(|&c| !members[c].is_empty()).collect();
        if nonempty.len() < p {
            return Err(Error::NotEnoughClasses {
                needed: p,
                found: nonempty.len(),
            });
        }
        Ok(PkSampler {
            members,
            nonempty,
            p,
            k,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn nonempty_classes(&self) -> &[usize] {
        &self.nonempty
    }

    /// Indices grouped by class, `K` per class. A class with at least `K`
    /// members is sampled without replacement; a smaller one contributes all
    /// of its members and fills the rest with replacement.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size());
        for ci in rng.sample_indices(self.nonempty.len(), self.p) {
            let m = &self.members[self.nonempty[ci]];
            if m.len() >= self.k {
                out.extend(rng.sample_indices(m.len(), self.k).into_iter().map(|j| m[j]));
            } else {
                out.extend_from_slice(m);
                for _ in m.len()..self.k {
                    out.push(m[rng.below(m.len())]);
                }
            }
        }
        out
    }
}

/// One-shot PK draw from a label vector.
pub fn pk_sample(labels: &[usize], p: usize, k: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    Ok(PkSampler::new(labels, p, k)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_eight() {
        let labels: Vec<usize> = (0..200).map(|i| i % 10).collect();
        let idx = pk_sample(&labels, 4, 8, &mut SeededRng::new(0)).unwrap();
        assert_eq!(idx.len(), 32);
        let mut classes: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        classes.dedup();
        assert_eq!(classes.len(), 4);
        for c in &classes {
            assert_eq!(idx.iter().filter(|&&i| labels[i] == *c).count(), 8);
        }
        // without replacement inside a class
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 32);
    }

    #[test]
    fn small_class_covered() {
        // class 0 has 3 members, class 1 has 20
        let mut labels = alloc::vec![0usize; 3];
        labels.extend(core::iter::repeat(1).take(20));
        for seed in 0..20 {
            let idx = pk_sample(&labels, 2, 8, &mut SeededRng::new(seed)).unwrap();
            let zero: Vec<usize> = idx.iter().copied().filter(|&i| labels[i] == 0).collect();
            assert_eq!(zero.len(), 8);
            for m in 0..3 {
                assert!(zero.contains(&m));
            }
        }
    }

    #[test]
    fn too_few_classes() {
        assert_eq!(
            pk_sample(&[0, 0, 2, 2], 3, 2, &mut SeededRng::new(0)).unwrap_err(),
            Error::NotEnoughClasses { needed: 3, found: 2 }
        );
    }

    #[test]
    fn class_selection_uniform() {
        let labels: Vec<usize> = (0..120).map(|i| i % 6).collect();
        let s = PkSampler::new(&labels, 2, 3).unwrap();
        let mut rng = SeededRng::new(5);
        let mut hist = [0f64; 6];
        let draws = 6000;
        for _ in 0..draws {
            let idx = s.sample(&mut rng);
            hist[labels[idx[0]]] += 1.0;
            hist[labels[idx[3]]] += 1.0;
        }
        let expected = 2.0 * draws as f64 / 6.0;
        let chi2: f64 = hist.iter().map(|o| (o - expected).powi(2) / expected).sum();
        // 5 degrees of freedom, p = 0.01
        assert!(chi2 < 15.086, "chi2 {chi2}");
    }

    proptest! {
        #[test]
        fn label_multiset(seed in any::<u64>(), p in 1usize..5, k in 1usize..9) {
            let mut rng = SeededRng::new(seed);
            let labels: Vec<usize> = (0..60).map(|_| rng.below(7)).collect();
            let s = match PkSampler::new(&labels, p, k) {
                Ok(s) => s,
                Err(_) => return Ok(()),
            };
            let idx = s.sample(&mut rng);
            prop_assert_eq!(idx.len(), p * k);
            prop_assert!(idx.iter().all(|&i| i < 60));
            for chunk in idx.chunks(k) {
                let c = labels[chunk[0]];
                prop_assert!(chunk.iter().all(|&i| labels[i] == c));
            }
            let mut cls: Vec<usize> = idx.chunks(k).map(|ch| labels[ch[0]]).collect();
            cls.sort_unstable();
            cls.dedup();
            prop_assert_eq!(cls.len(), p);
        }
    }
}
