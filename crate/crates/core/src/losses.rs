//! Training losses with analytic gradients with respect to the batch
//! embeddings (and the proxies, for SoftTriple).
//!
//! Every similarity is cosine, so each loss first maps embeddings to the unit
//! sphere and the gradient is carried back through the normalization:
//! `∂L/∂x = (g − (g·x̂)x̂) / ‖x‖` for the gradient `g` with respect to `x̂`.
//!
//! Contrastive sums run over *ordered* pairs: every unordered batch pair
//! appears twice. Bank features are constants and receive no gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::memory_bank::MemoryBank;
use crate::numkit::{dot, normalize_rows, row_norms, FeatureMatrix, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveParams {
    /// Negative pairs contribute only above this similarity.
    pub margin: f64,
}

impl ContrastiveParams {
    pub fn new(margin: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&margin) {
            return Err(Error::OutOfRange {
                what: "contrastive margin",
                value: margin,
            });
        }
        Ok(ContrastiveParams { margin })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub d_embeddings: FeatureMatrix,
    /// Same layout as [`SoftTripleParams::proxies`].
    pub d_proxies: Option<Vec<f64>>,
}

fn check_batch(embeds: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    if embeds.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeds.rows(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Projects unit-sphere gradients back to raw embedding gradients in place.
fn unproject(g_unit: &mut FeatureMatrix, unit: &FeatureMatrix, norms: &[f64]) {
    for (i, n) in norms.iter().enumerate() {
        let u = unit.row(i);
        let g = g_unit.row_mut(i);
        let radial = dot(g, u);
        for (gk, uk) in g.iter_mut().zip(u) {
            *gk = (*gk - radial * uk) / n;
        }
    }
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += c * s);
}

/// One pair term: `-S` for positives, `max(S − margin, 0)` for negatives.
/// Returns the value and `∂term/∂S`.
#[inline]
fn pair_term(s: f64, positive: bool, margin: f64) -> (f64, f64) {
    if positive {
        (-s, -1.0)
    } else if s > margin {
        (s - margin, 1.0)
    } else {
        (0.0, 0.0)
    }
}

fn batch_terms(
    unit: &FeatureMatrix,
    labels: &[usize],
    margin: f64,
    g_unit: &mut FeatureMatrix,
) -> f64 {
    let n = labels.len();
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = dot(unit.row(i), unit.row(j));
            let (v, ds) = pair_term(s, labels[i] == labels[j], margin);
            if ds == 0.0 {
                continue;
            }
            value += v;
            let uj = unit.row(j).to_vec();
            let ui = unit.row(i).to_vec();
            add_scaled(g_unit.row_mut(i), &uj, ds);
            add_scaled(g_unit.row_mut(j), &ui, ds);
        }
    }
    value
}

/// Contrastive loss over ordered distinct batch pairs.
pub fn contrastive_batch(
    embeds: &FeatureMatrix,
    labels: &[usize],
    params: &ContrastiveParams,
) -> Result<LossOutput> {
    check_batch(embeds, labels)?;
    if labels.len() < 2 {
        return Err(Error::Invalid(format!(
            "contrastive loss needs at least 2 samples, got {}",
            labels.len()
        )));
    }
    let norms = row_norms(embeds)?;
    let unit = normalize_rows(embeds)?;
    let mut g = FeatureMatrix::zeros(embeds.rows(), embeds.cols());
    let value = batch_terms(&unit, labels, params.margin, &mut g);
    unproject(&mut g, &unit, &norms);
    Ok(LossOutput {
        value,
        d_embeddings: g,
        d_proxies: None,
    })
}

/// Batch contrastive loss plus the same pair terms between every batch
/// sample and every bank entry. An empty bank contributes nothing; a batch
/// of one has no batch pairs.
pub fn memory_contrastive(
    bank: &MemoryBank,
    embeds: &FeatureMatrix,
    labels: &[usize],
    params: &ContrastiveParams,
) -> Result<LossOutput> {
    check_batch(embeds, labels)?;
    if !bank.is_empty() && bank.dim() != embeds.cols() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: embeds.cols(),
        });
    }
    let norms = row_norms(embeds)?;
    let unit = normalize_rows(embeds)?;
    let mut g = FeatureMatrix::zeros(embeds.rows(), embeds.cols());
    let mut value = batch_terms(&unit, labels, params.margin, &mut g);
    for (i, &y) in labels.iter().enumerate() {
        let u = unit.row(i);
        let gi = g.row_mut(i);
        for e in bank.entries() {
            let s = dot(u, &e.unit);
            let (v, ds) = pair_term(s, y == e.label, params.margin);
            if ds != 0.0 {
                value += v;
                add_scaled(gi, &e.unit, ds);
            }
        }
    }
    unproject(&mut g, &unit, &norms);
    Ok(LossOutput {
        value,
        d_embeddings: g,
        d_proxies: None,
    })
}

/// Learnable multi-center proxies and the SoftTriple hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTripleParams {
    pub num_classes: usize,
    pub proxies_per_class: usize,
    pub dim: usize,
    /// `num_classes x proxies_per_class x dim`, row-major.
    pub proxies: Vec<f64>,
    /// Logit scale λ_s.
    pub scale: f64,
    /// Sharpness γ of the softmax that weights proxies within a class.
    pub gamma: f64,
    /// Margin δ subtracted from the own-class similarity.
    pub margin: f64,
}

impl SoftTripleParams {
    /// Proxies drawn uniformly on the unit sphere.
    pub fn new(
        num_classes: usize,
        proxies_per_class: usize,
        dim: usize,
        scale: f64,
        gamma: f64,
        margin: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if num_classes == 0 || proxies_per_class == 0 || dim == 0 {
            return Err(Error::Invalid(format!(
                "soft triple needs positive sizes: classes={num_classes} H={proxies_per_class} d={dim}"
            )));
        }
        if !(scale > 0.0) || !(gamma > 0.0) || !(margin >= 0.0) {
            return Err(Error::Invalid(format!(
                "soft triple needs scale>0, gamma>0, margin>=0: {scale} {gamma} {margin}"
            )));
        }
        let mut proxies = Vec::with_capacity(num_classes * proxies_per_class * dim);
        for _ in 0..num_classes * proxies_per_class {
            proxies.extend(rng.unit_vector(dim));
        }
        Ok(SoftTripleParams {
            num_classes,
            proxies_per_class,
            dim,
            proxies,
            scale,
            gamma,
            margin,
        })
    }

    pub fn proxy(&self, class: usize, h: usize) -> &[f64] {
        let start = (class * self.proxies_per_class + h) * self.dim;
        &self.proxies[start..start + self.dim]
    }

    fn proxy_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::from_vec(
            self.num_classes * self.proxies_per_class,
            self.dim,
            self.proxies.clone(),
        )
        .expect("proxy buffer sized at construction")
    }
}

/// Mean SoftTriple loss over the batch.
///
/// Class similarity is `S'_j = Σ_h q_h s_h` with `s_h = x̂·p̂_j^h` and
/// `q = softmax_h(γ s_h)`; the per-sample loss is the cross-entropy of the
/// logits `λ_s(S'_y − δ)` (own class) and `λ_s S'_j` (others).
pub fn soft_triple(
    embeds: &FeatureMatrix,
    labels: &[usize],
    params: &SoftTripleParams,
) -> Result<LossOutput> {
    check_batch(embeds, labels)?;
    if embeds.cols() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            found: embeds.cols(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= params.num_classes) {
        return Err(Error::OutOfRange {
            what: "soft triple label",
            value: bad as f64,
        });
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("soft triple batch"));
    }
    let (c, h, d) = (params.num_classes, params.proxies_per_class, params.dim);
    let norms = row_norms(embeds)?;
    let unit = normalize_rows(embeds)?;
    let raw_p = params.proxy_matrix();
    let p_norms = row_norms(&raw_p)?;
    let p_unit = normalize_rows(&raw_p)?;

    let mut g_x = FeatureMatrix::zeros(n, d);
    let mut g_p = FeatureMatrix::zeros(c * h, d);
    let mut value = 0.0;
    let inv_n = 1.0 / n as f64;

    let mut sims = vec![0.0; h];
    let mut weights = vec![0.0; h];
    let mut class_sim = vec![0.0; c];
    let mut class_weights = vec![0.0; c * h];
    let mut class_s = vec![0.0; c * h];
    let mut logits = vec![0.0; c];

    for (i, &y) in labels.iter().enumerate() {
        let x = unit.row(i);
        for j in 0..c {
            for k in 0..h {
                sims[k] = dot(x, p_unit.row(j * h + k));
            }
            let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..h {
                weights[k] = libm::exp(params.gamma * (sims[k] - max));
                z += weights[k];
            }
            let mut s = 0.0;
            for k in 0..h {
                weights[k] /= z;
                s += weights[k] * sims[k];
            }
            class_sim[j] = s;
            class_weights[j * h..(j + 1) * h].copy_from_slice(&weights);
            class_s[j * h..(j + 1) * h].copy_from_slice(&sims);
            logits[j] = params.scale * (s - if j == y { params.margin } else { 0.0 });
        }
        let top = (0..c).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
        let max = logits[top];
        let rest: f64 = (0..c)
            .filter(|&j| j != top)
            .map(|j| libm::exp(logits[j] - max))
            .sum();
        // log1p keeps tiny losses positive instead of rounding them to zero
        let tail = libm::log1p(rest);
        let lse = max + tail;
        let li = (max - logits[y]) + tail;
        if !li.is_finite() {
            return Err(Error::NonFinite {
                what: format!("soft triple loss for sample {i}"),
            });
        }
        value += li * inv_n;

        let gx = g_x.row_mut(i);
        for j in 0..c {
            let soft = libm::exp(logits[j] - lse);
            let d_logit = (soft - if j == y { 1.0 } else { 0.0 }) * inv_n;
            let d_s = params.scale * d_logit;
            for k in 0..h {
                let q = class_weights[j * h + k];
                let coef = d_s * q * (1.0 + params.gamma * (class_s[j * h + k] - class_sim[j]));
                add_scaled(gx, p_unit.row(j * h + k), coef);
                add_scaled(g_p.row_mut(j * h + k), x, coef);
            }
        }
    }
    unproject(&mut g_x, &unit, &norms);
    unproject(&mut g_p, &p_unit, &p_norms);
    if !g_x.is_finite() || !g_p.is_finite() {
        return Err(Error::NonFinite {
            what: "soft triple gradient".into(),
        });
    }
    Ok(LossOutput {
        value,
        d_embeddings: g_x,
        d_proxies: Some(g_p.into_vec()),
    })
}
