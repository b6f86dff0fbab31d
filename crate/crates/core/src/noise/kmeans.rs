//! Mini-batch k-means with k-means++ seeding and a final pass that leaves no
//! cluster empty.

use alloc::vec;
use alloc::vec::Vec;

use crate::numkit::{FeatureMatrix, SeededRng};
use crate::{Error, Result};

pub const DEFAULT_ITERS: usize = 50;
pub const DEFAULT_BATCH: usize = 64;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center and its squared distance; ties go to the lower center.
fn nearest(x: &[f64], centers: &FeatureMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.iter_rows().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(x: &FeatureMatrix, k: usize, rng: &mut SeededRng) -> FeatureMatrix {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.below(n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).expect("total > 0"))
        } else {
            // only duplicates of existing centers remain
            taken.iter().position(|t| !t).expect("k <= n")
        };
        chosen.push(pick);
        taken[pick] = true;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    x.select_rows(&chosen)
}

/// Clusters the rows of `x` into `k` groups.
///
/// Centers start from k-means++ and then take `iters` mini-batch steps of
/// `batch` points each with per-center `1/count` learning rates. The final
/// assignment is to the nearest center; any empty cluster then takes the
/// point farthest from its center out of the currently largest cluster.
pub fn minibatch_kmeans(
    x: &FeatureMatrix,
    k: usize,
    rng: &mut SeededRng,
    iters: usize,
    batch: usize,
) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Invalid(alloc::format!(
            "k-means needs 1 <= k <= n, got k={k} n={n}"
        )));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let mut centers = seed_plus_plus(x, k, rng);
    let mut counts = vec![0u64; k];
    let b = batch.clamp(1, n);
    for _ in 0..iters {
        let idx = rng.sample_indices(n, b);
        let assigned: Vec<usize> = idx.iter().map(|&i| nearest(x.row(i), &centers).0).collect();
        for (&i, &c) in idx.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let xi = x.row(i);
            for (cv, xv) in centers.row_mut(c).iter_mut().zip(xi) {
                *cv += eta * (xv - *cv);
            }
        }
    }

    let mut assign: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centers).0).collect();
    let mut sizes = vec![0usize; k];
    assign.iter().for_each(|&c| sizes[c] += 1);
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let mut largest = 0;
        for c in 1..k {
            if sizes[c] > sizes[largest] {
                largest = c;
            }
        }
        let mut far = (usize::MAX, f64::NEG_INFINITY);
        for (i, &c) in assign.iter().enumerate() {
            if c == largest {
                let d = sq_dist(x.row(i), centers.row(largest));
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        let moved = far.0;
        assign[moved] = empty;
        sizes[largest] -= 1;
        sizes[empty] += 1;
        centers.row_mut(empty).copy_from_slice(x.row(moved));
    }
    Ok(assign)
}
