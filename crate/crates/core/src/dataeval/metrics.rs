//! Retrieval metrics over cosine similarity and noise-flagging counts.
//!
//! Each query ranks every other sample by descending cosine similarity, ties
//! to the lower index; the query itself is never retrieved.

use alloc::vec::Vec;

use crate::numkit::{pairwise_sim, FeatureMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalReport {
    pub precision_at_1: f64,
    pub map_at_r: f64,
    /// Queries with at least one same-label peer (the MAP@R denominator).
    pub map_queries: usize,
}

fn check(embeds: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    if embeds.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeds.rows(),
            found: labels.len(),
        });
    }
    if labels.len() < 2 {
        return Err(Error::Invalid(alloc::format!(
            "retrieval needs at least 2 samples, got {}",
            labels.len()
        )));
    }
    Ok(())
}

fn ranking(sims: &[f64], q: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).filter(|&j| j != q).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order
}

/// P@1 and MAP@R from one similarity matrix. MAP@R is `0` when no query has
/// a same-label peer.
pub fn retrieval_report(embeds: &FeatureMatrix, labels: &[usize]) -> Result<RetrievalReport> {
    check(embeds, labels)?;
    let sims = pairwise_sim(embeds, embeds)?;
    let n = labels.len();
    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    let mut map_queries = 0usize;
    for q in 0..n {
        let order = ranking(sims.row(q), q);
        if labels[order[0]] == labels[q] {
            hits += 1;
        }
        let r = labels.iter().filter(|&&y| y == labels[q]).count() - 1;
        if r == 0 {
            continue;
        }
        let mut rel = 0usize;
        let mut ap = 0.0;
        for (i, &j) in order[..r].iter().enumerate() {
            if labels[j] == labels[q] {
                rel += 1;
                ap += rel as f64 / (i + 1) as f64;
            }
        }
        ap_sum += ap / r as f64;
        map_queries += 1;
    }
    Ok(RetrievalReport {
        precision_at_1: hits as f64 / n as f64,
        map_at_r: if map_queries == 0 {
            0.0
        } else {
            ap_sum / map_queries as f64
        },
        map_queries,
    })
}

pub fn precision_at_1(embeds: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    Ok(retrieval_report(embeds, labels)?.precision_at_1)
}

pub fn map_at_r(embeds: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    Ok(retrieval_report(embeds, labels)?.map_at_r)
}

/// Confusion counts with "flagged noisy" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseIdCounter {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl NoiseIdCounter {
    pub fn record(&mut self, flagged: bool, corrupted: bool) {
        match (flagged, corrupted) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
        }
    }

    pub fn merge(&mut self, other: &NoiseIdCounter) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    /// Precision is `0` when nothing was flagged; recall is `0` when nothing
    /// was corrupted.
    pub fn metrics(&self) -> NoiseIdMetrics {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.true_pos, self.true_pos + self.false_pos);
        let recall = ratio(self.true_pos, self.true_pos + self.false_neg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        NoiseIdMetrics {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseIdMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn noise_id_metrics(flagged: &[bool], corrupted: &[bool]) -> Result<NoiseIdMetrics> {
    if flagged.len() != corrupted.len() {
        return Err(Error::DimensionMismatch {
            expected: corrupted.len(),
            found: flagged.len(),
        });
    }
    let mut c = NoiseIdCounter::default();
    flagged.iter().zip(corrupted).for_each(|(f, t)| c.record(*f, *t));
    Ok(c.metrics())
}
