//! Clean-label scoring and the per-batch keep/drop decision.
//!
//! A sample's clean probability is a softmax over classes of its mean cosine
//! similarity to each class's stored features. [`p_clean_full`] evaluates
//! that by scanning the memory bank; [`p_clean_centers`] evaluates the same
//! quantity from class centers in `O(|C|·d)` per sample. The two positive-only
//! scores are ablation baselines that skip the softmax.
//!
//! Samples whose own class has no evidence yet are *presumed clean*: they get
//! `p = 1`, bypass the percentile statistics and are always kept.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::memory_bank::{ClassCenter, MemoryBank};
use crate::numkit::{cosine_sim, dot, l2_normalize, percentile_nearest_rank, FeatureMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Threshold is the current batch's percentile.
    Trm,
    /// Threshold is the mean of the last `window` batch percentiles.
    Strm,
}

/// Sliding window of per-batch percentile values.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    mode: ThresholdMode,
    rate: f64,
    window: usize,
    history: VecDeque<f64>,
}

impl ThresholdState {
    /// `rate` is the filtering rate in `[0, 1)`; `0` keeps every sample.
    pub fn new(mode: ThresholdMode, rate: f64, window: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::OutOfRange {
                what: "filtering rate",
                value: rate,
            });
        }
        if window == 0 {
            return Err(Error::OutOfRange {
                what: "threshold window",
                value: 0.0,
            });
        }
        Ok(ThresholdState {
            mode,
            rate,
            window,
            history: VecDeque::new(),
        })
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn window(&self) -> usize {
        match self.mode {
            ThresholdMode::Trm => 1,
            ThresholdMode::Strm => self.window,
        }
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &f64> + '_ {
        self.history.iter()
    }

    /// Current `m`; `-∞` until the first percentile has been recorded.
    pub fn threshold(&self) -> f64 {
        if self.history.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.history.iter().sum::<f64>() / self.history.len() as f64
        }
    }

    /// Pushes this batch's nearest-rank percentile of `scores` and returns the
    /// window mean. An empty `scores` leaves the history untouched.
    pub fn update(&mut self, scores: &[f64]) -> Result<f64> {
        if self.rate == 0.0 || scores.is_empty() {
            return Ok(self.threshold());
        }
        let q = percentile_nearest_rank(scores, self.rate)?;
        self.history.push_back(q);
        while self.history.len() > self.window() {
            self.history.pop_front();
        }
        Ok(self.threshold())
    }
}

/// Per-sample scores plus the presumed-clean flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanProbVector {
    pub p: Vec<f64>,
    pub presumed_clean: Vec<bool>,
}

impl CleanProbVector {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Scores that take part in the percentile statistics.
    pub fn ranked_scores(&self) -> Vec<f64> {
        self.p
            .iter()
            .zip(&self.presumed_clean)
            .filter(|(_, pc)| !**pc)
            .map(|(p, _)| *p)
            .collect()
    }

    fn all_presumed(n: usize) -> Self {
        CleanProbVector {
            p: vec![1.0; n],
            presumed_clean: vec![true; n],
        }
    }
}

fn check_labels(embeds: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    if embeds.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeds.rows(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// `exp(t[own]) / Σ_k exp(t[k])` over the classes with evidence.
fn softmax_own(logits: &[(usize, f64)], own: usize) -> f64 {
    let max = logits.iter().map(|(_, t)| *t).fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    let mut num = 0.0;
    for &(k, t) in logits {
        let e = libm::exp(t - max);
        denom += e;
        if k == own {
            num = e;
        }
    }
    num / denom
}

/// Clean probability by direct evaluation of the per-class mean similarity
/// over every bank entry.
pub fn p_clean_full(
    bank: &MemoryBank,
    embeds: &FeatureMatrix,
    labels: &[usize],
) -> Result<CleanProbVector> {
    check_labels(embeds, labels)?;
    if bank.is_empty() {
        return Ok(CleanProbVector::all_presumed(labels.len()));
    }
    let classes = bank.num_class_slots();
    let mut out = CleanProbVector {
        p: Vec::with_capacity(labels.len()),
        presumed_clean: Vec::with_capacity(labels.len()),
    };
    let mut sums = vec![0.0; classes];
    for (x, &y) in embeds.iter_rows().zip(labels) {
        if bank.class_count(y) == 0 {
            out.p.push(1.0);
            out.presumed_clean.push(true);
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for e in bank.entries() {
            sums[e.label] += cosine_sim(x, &e.feature)?;
        }
        let logits: Vec<(usize, f64)> = (0..classes)
            .filter(|&k| bank.class_count(k) > 0)
            .map(|k| (k, sums[k] / bank.class_count(k) as f64))
            .collect();
        out.p.push(softmax_own(&logits, y));
        out.presumed_clean.push(false);
    }
    Ok(out)
}

/// Clean probability from class centers: `exp(w_y·x̂) / Σ_k exp(w_k·x̂)` over
/// valid centers. A sample whose own center is invalid is presumed clean.
pub fn p_clean_centers(
    centers: &[ClassCenter],
    embeds: &FeatureMatrix,
    labels: &[usize],
) -> Result<CleanProbVector> {
    check_labels(embeds, labels)?;
    let mut out = CleanProbVector {
        p: Vec::with_capacity(labels.len()),
        presumed_clean: Vec::with_capacity(labels.len()),
    };
    for (i, (x, &y)) in embeds.iter_rows().zip(labels).enumerate() {
        if !centers.get(y).is_some_and(|c| c.valid) {
            out.p.push(1.0);
            out.presumed_clean.push(true);
            continue;
        }
        let xn = l2_normalize(x).map_err(|_| Error::ZeroNorm { row: Some(i) })?;
        let logits: Vec<(usize, f64)> = centers
            .iter()
            .enumerate()
            .filter(|(_, c)| c.valid)
            .map(|(k, c)| (k, dot(&c.w, &xn)))
            .collect();
        out.p.push(softmax_own(&logits, y));
        out.presumed_clean.push(false);
    }
    Ok(out)
}

/// Ablation score: mean cosine similarity to same-label batch peers (self
/// excluded). Samples without a peer are presumed clean.
pub fn p_clean_batch_positive(embeds: &FeatureMatrix, labels: &[usize]) -> Result<CleanProbVector> {
    check_labels(embeds, labels)?;
    let n = labels.len();
    let mut out = CleanProbVector {
        p: Vec::with_capacity(n),
        presumed_clean: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut total = 0.0;
        let mut peers = 0usize;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                total += cosine_sim(embeds.row(i), embeds.row(j))?;
                peers += 1;
            }
        }
        if peers == 0 {
            out.p.push(1.0);
            out.presumed_clean.push(true);
        } else {
            out.p.push(total / peers as f64);
            out.presumed_clean.push(false);
        }
    }
    Ok(out)
}

/// Ablation score: mean cosine similarity to the stored features of the
/// sample's own class, with no negative classes.
pub fn p_clean_memory_positive(
    bank: &MemoryBank,
    embeds: &FeatureMatrix,
    labels: &[usize],
) -> Result<CleanProbVector> {
    check_labels(embeds, labels)?;
    let mut out = CleanProbVector {
        p: Vec::with_capacity(labels.len()),
        presumed_clean: Vec::with_capacity(labels.len()),
    };
    for (x, &y) in embeds.iter_rows().zip(labels) {
        if bank.class_count(y) == 0 {
            out.p.push(1.0);
            out.presumed_clean.push(true);
        } else {
            out.p.push(bank.class_mean_sim(x, y)?);
            out.presumed_clean.push(false);
        }
    }
    Ok(out)
}

/// Which clean-score function drives the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    /// Everything passes with `p = 1`.
    Off,
    Full,
    Centers,
    BatchPositive,
    MemoryPositive,
}

impl Scoring {
    pub fn score(
        self,
        bank: &MemoryBank,
        embeds: &FeatureMatrix,
        labels: &[usize],
        num_classes: usize,
    ) -> Result<CleanProbVector> {
        match self {
            Scoring::Off => {
                check_labels(embeds, labels)?;
                Ok(CleanProbVector::all_presumed(labels.len()))
            }
            Scoring::Full => p_clean_full(bank, embeds, labels),
            Scoring::Centers => p_clean_centers(&bank.centers(num_classes), embeds, labels),
            Scoring::BatchPositive => p_clean_batch_positive(embeds, labels),
            Scoring::MemoryPositive => p_clean_memory_positive(bank, embeds, labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
}

/// Keeps index `i` iff `p_i > m` or it is presumed clean.
pub fn filter_batch(scores: &CleanProbVector, m: f64) -> Partition {
    let mut part = Partition::default();
    for (i, (&p, &pc)) in scores.p.iter().zip(&scores.presumed_clean).enumerate() {
        if pc || p > m {
            part.clean.push(i);
        } else {
            part.noisy.push(i);
        }
    }
    part
}
