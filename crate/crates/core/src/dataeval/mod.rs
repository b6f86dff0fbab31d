//! Datasets, synthetic generation, PK batch sampling and evaluation metrics.

pub mod metrics;
pub mod sampler;

use alloc::string::String;
use alloc::vec::Vec;

use crate::numkit::{FeatureMatrix, SeededRng, Stream};
use crate::{Error, Result};

pub use metrics::{
    map_at_r, noise_id_metrics, precision_at_1, retrieval_report, NoiseIdCounter, NoiseIdMetrics,
    RetrievalReport,
};
pub use sampler::{pk_sample, PkSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Size of the label universe; every label is below it.
    pub num_classes: usize,
    pub split: Split,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::OutOfRange {
                what: "label",
                value: bad as f64,
            });
        }
        if let Some(r) = features.iter_rows().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                what: alloc::format!("dataset row {r}"),
            });
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Splits by class: classes below `train_classes` form the training
    /// split, the rest form the test split relabelled from zero.
    pub fn split_by_class(&self, train_classes: usize) -> Result<(Dataset, Dataset)> {
        if train_classes == 0 || train_classes >= self.num_classes {
            return Err(Error::Invalid(alloc::format!(
                "train classes must be in 1..{}, got {train_classes}",
                self.num_classes
            )));
        }
        let (tr, te): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|&i| self.labels[i] < train_classes);
        let train = Dataset::new(
            self.features.select_rows(&tr),
            tr.iter().map(|&i| self.labels[i]).collect(),
            train_classes,
            Split::Train,
            self.provenance.clone(),
        )?;
        let test = Dataset::new(
            self.features.select_rows(&te),
            te.iter().map(|&i| self.labels[i] - train_classes).collect(),
            self.num_classes - train_classes,
            Split::Test,
            self.provenance.clone(),
        )?;
        Ok((train, test))
    }
}

/// Gaussian class blobs around random centers.
///
/// The first `d_in − nuisance_dims` coordinates carry the class signal: the
/// center is uniform on that sphere times `center_scale`, plus isotropic
/// noise of std `cluster_std`. The trailing `nuisance_dims` coordinates are
/// pure noise of std `nuisance_std`, shared by every class. With
/// `std_spread > 0` each class scales its `cluster_std` by `exp(s·u)` for a
/// per-class `u` uniform in `[-1, 1]`, so some classes are much looser than
/// others.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub d_in: usize,
    pub center_scale: f64,
    pub cluster_std: f64,
    pub nuisance_dims: usize,
    pub nuisance_std: f64,
    pub std_spread: f64,
    /// Classes are grouped round-robin into this many families whose
    /// centers sit `family_spread` apart from a shared family direction;
    /// `0` draws every center independently.
    pub families: usize,
    pub family_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, d_in: usize, center_scale: f64, cluster_std: f64, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            per_class,
            d_in,
            center_scale,
            cluster_std,
            nuisance_dims: 0,
            nuisance_std: 0.0,
            std_spread: 0.0,
            families: 0,
            family_spread: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::NotEnoughClasses {
                needed: 2,
                found: self.classes,
            });
        }
        if self.per_class < 2 {
            return Err(Error::OutOfRange {
                what: "samples per class",
                value: self.per_class as f64,
            });
        }
        if self.nuisance_dims >= self.d_in {
            return Err(Error::Invalid(alloc::format!(
                "nuisance dims {} must leave at least one signal dim of {}",
                self.nuisance_dims, self.d_in
            )));
        }
        for (what, v) in [
            ("center scale", self.center_scale),
            ("cluster std", self.cluster_std),
            ("nuisance std", self.nuisance_std),
            ("std spread", self.std_spread),
            ("family spread", self.family_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        Ok(())
    }

    pub fn signal_dims(&self) -> usize {
        self.d_in - self.nuisance_dims
    }
}

/// Rows are grouped by class, `per_class` consecutive rows per label.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::for_stream(spec.seed, Stream::Data);
    let sig = spec.signal_dims();
    let centers: Vec<Vec<f64>> = if spec.families == 0 {
        (0..spec.classes)
            .map(|_| rng.unit_vector(sig).into_iter().map(|v| v * spec.center_scale).collect())
            .collect()
    } else {
        let fam: Vec<Vec<f64>> = (0..spec.families).map(|_| rng.unit_vector(sig)).collect();
        (0..spec.classes)
            .map(|c| {
                let u = rng.unit_vector(sig);
                let v: Vec<f64> = fam[c % spec.families]
                    .iter()
                    .zip(&u)
                    .map(|(f, e)| f + spec.family_spread * e)
                    .collect();
                let n = crate::numkit::norm(&v).max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * spec.center_scale / n).collect()
            })
            .collect()
    };
    let stds: Vec<f64> = (0..spec.classes)
        .map(|_| {
            if spec.std_spread > 0.0 {
                spec.cluster_std * libm::exp(spec.std_spread * rng.uniform(-1.0, 1.0))
            } else {
                spec.cluster_std
            }
        })
        .collect();
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.d_in);
    let mut labels = Vec::with_capacity(n);
    for (c, (center, std)) in centers.iter().zip(&stds).enumerate() {
        for _ in 0..spec.per_class {
            data.extend(center.iter().map(|m| m + std * rng.gaussian()));
            data.extend((0..spec.nuisance_dims).map(|_| spec.nuisance_std * rng.gaussian()));
            labels.push(c);
        }
    }
    Dataset::new(
        FeatureMatrix::from_vec(n, spec.d_in, data)?,
        labels,
        spec.classes,
        Split::Train,
        Provenance::Synthetic(spec.clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::dot;

    #[test]
    fn shape_contract() {
        let d = generate_synthetic(&SyntheticSpec::new(2, 2, 5, 3.0, 0.5, 1)).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.dim(), 5);
        assert_eq!(d.labels, [0, 0, 1, 1]);
    }

    #[test]
    fn zero_std_rows_identical() {
        let d = generate_synthetic(&SyntheticSpec::new(3, 4, 6, 2.0, 0.0, 9)).unwrap();
        for i in 0..12 {
            let first = (i / 4) * 4;
            assert_eq!(d.features.row(i), d.features.row(first));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = SyntheticSpec::new(5, 3, 4, 1.0, 1.0, 42);
        assert_eq!(generate_synthetic(&s).unwrap(), generate_synthetic(&s).unwrap());
        let other = SyntheticSpec { seed: 43, ..s.clone() };
        assert_ne!(generate_synthetic(&s).unwrap().features, generate_synthetic(&other).unwrap().features);
    }

    #[test]
    fn nearest_centroid_separates_wide_blobs() {
        let spec = SyntheticSpec::new(20, 30, 16, 10.0, 0.5, 3);
        let d = generate_synthetic(&spec).unwrap();
        let cents: Vec<Vec<f64>> = (0..20)
            .map(|c| {
                let mut m = alloc::vec![0.0; 16];
                for i in 0..30 {
                    for (mk, v) in m.iter_mut().zip(d.features.row(c * 30 + i)) {
                        *mk += v / 30.0;
                    }
                }
                m
            })
            .collect();
        let correct = (0..d.len())
            .filter(|&i| {
                let x = d.features.row(i);
                let best = (0..20)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&cents[a]).map(|(p, q)| (p - q) * (p - q)).sum();
                        let db: f64 = x.iter().zip(&cents[b]).map(|(p, q)| (p - q) * (p - q)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best == d.labels[i]
            })
            .count();
        assert!(correct as f64 >= 0.99 * d.len() as f64);
    }

    #[test]
    fn nuisance_dims_are_class_free() {
        let mut spec = SyntheticSpec::new(4, 50, 6, 5.0, 0.1, 0);
        spec.nuisance_dims = 2;
        spec.nuisance_std = 3.0;
        let d = generate_synthetic(&spec).unwrap();
        // signal part of same-class rows stays close; nuisance part varies
        let a = d.features.row(0);
        let b = d.features.row(1);
        let sig: f64 = a[..4].iter().zip(&b[..4]).map(|(x, y)| (x - y).abs()).sum();
        assert!(sig < 2.0);
        let var: f64 = (0..d.len()).map(|i| d.features.get(i, 5).powi(2)).sum::<f64>() / d.len() as f64;
        assert!((var - 9.0).abs() < 2.5, "{var}");
        let c0: Vec<f64> = a[..4].to_vec();
        assert!(dot(&c0, &c0) > 1.0);
    }

    #[test]
    fn spread_varies_class_width() {
        let mut spec = SyntheticSpec::new(10, 200, 3, 0.0, 1.0, 4);
        spec.std_spread = 1.0;
        let d = generate_synthetic(&spec).unwrap();
        let widths: Vec<f64> = (0..10)
            .map(|c| (0..200).map(|i| d.features.get(c * 200 + i, 0).powi(2)).sum::<f64>() / 200.0)
            .collect();
        let lo = widths.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = widths.iter().copied().fold(0.0, f64::max);
        assert!(hi / lo > 2.0, "{widths:?}");
        assert!(widths.iter().all(|w| *w > 0.1 && *w < 9.0));
    }

    #[test]
    fn families_share_directions() {
        let mut spec = SyntheticSpec::new(40, 2, 8, 2.0, 0.0, 6);
        spec.families = 4;
        spec.family_spread = 0.3;
        let d = generate_synthetic(&spec).unwrap();
        let center = |c: usize| d.features.row(c * 2);
        let (mut same, mut cross) = (0.0, 0.0);
        for a in 0..40 {
            assert!((crate::numkit::norm(center(a)) - 2.0).abs() < 1e-12);
            for b in a + 1..40 {
                let s = crate::numkit::cosine_sim(center(a), center(b)).unwrap();
                if a % 4 == b % 4 {
                    same += s / 180.0;
                } else {
                    cross += s / 600.0;
                }
            }
        }
        assert!(same > 0.8 && cross.abs() < 0.3, "{same} {cross}");
    }

    #[test]
    fn class_split_relabels_test() {
        let d = generate_synthetic(&SyntheticSpec::new(5, 3, 2, 1.0, 1.0, 0)).unwrap();
        let (tr, te) = d.split_by_class(3).unwrap();
        assert_eq!(tr.len(), 9);
        assert_eq!(te.len(), 6);
        assert_eq!(te.num_classes, 2);
        assert_eq!(te.labels, [0, 0, 0, 1, 1, 1]);
        assert_eq!(te.features.row(0), d.features.row(9));
        assert_eq!(te.split, Split::Test);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic(&SyntheticSpec::new(1, 4, 2, 1.0, 1.0, 0)).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(3, 1, 2, 1.0, 1.0, 0)).is_err());
        let mut s = SyntheticSpec::new(3, 3, 2, 1.0, 1.0, 0);
        s.nuisance_dims = 2;
        assert!(generate_synthetic(&s).is_err());
        assert!(Dataset::new(FeatureMatrix::zeros(1, 1), alloc::vec![3], 2, Split::Train, Provenance::File("x".into())).is_err());
    }
}
