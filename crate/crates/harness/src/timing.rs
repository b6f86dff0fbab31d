//! Per-iteration wall-clock cost of each filtering variant, measured only
//! once the memory bank is full.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use prism_core::train::Trainer;

use crate::config::{ExperimentConfig, Variant};
use crate::experiment::{prepare_data, PreparedData};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTiming {
    pub variant: String,
    /// Iterations run before timing started.
    pub warmup: u64,
    pub timed_iters: u64,
    pub ms_per_iter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub config_hash: String,
    pub variants: Vec<VariantTiming>,
}

impl TimingReport {
    pub fn ms(&self, variant: Variant) -> Option<f64> {
        self.variants
            .iter()
            .find(|v| v.variant == variant.name())
            .map(|v| v.ms_per_iter)
    }
}

/// Iterations needed to fill the bank if every step enqueued its expected
/// clean share.
pub fn estimated_fill_iters(cfg: &ExperimentConfig) -> u64 {
    let per_step = (cfg.sampler.p * cfg.sampler.k) as f64 * (1.0 - cfg.prism.rate);
    (cfg.bank.capacity as f64 / per_step).ceil() as u64
}

/// Times one variant: runs at least `warmup` iterations and until the bank is
/// full, then times `n_iters` more.
pub fn time_variant(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    variant: Variant,
    n_iters: u64,
    warmup: u64,
) -> Result<VariantTiming, HarnessError> {
    let mut c = cfg.clone();
    c.prism.variant = variant;
    // the fill can take longer than estimated when filtering bites harder
    let warm_cap = warmup.max(10 * estimated_fill_iters(cfg));
    c.optimizer.total_iters = warm_cap + n_iters;
    let mut trainer = Trainer::new(c.trainer_config(), &data.noisy.labels, data.train.num_classes)?;
    let mut done = 0u64;
    while done < warmup || trainer.bank().len() < trainer.bank().capacity() {
        if done == warm_cap {
            return Err(HarnessError::Runtime(format!(
                "bank not full after {warm_cap} warmup iterations ({} of {})",
                trainer.bank().len(),
                trainer.bank().capacity()
            )));
        }
        trainer.step(&data.train.features, &data.noisy.labels)?;
        done += 1;
    }
    let start = Instant::now();
    for _ in 0..n_iters {
        trainer.step(&data.train.features, &data.noisy.labels)?;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / n_iters.max(1) as f64;
    Ok(VariantTiming {
        variant: variant.name().to_string(),
        warmup: done,
        timed_iters: n_iters,
        ms_per_iter: ms,
    })
}

/// Mean milliseconds per iteration for no filtering, full scoring and
/// center scoring. `warmup` defaults to the estimated bank-fill count.
pub fn time_iterations(cfg: &ExperimentConfig, n_iters: u64, warmup: Option<u64>) -> Result<TimingReport, HarnessError> {
    let data = prepare_data(cfg)?;
    let warmup = warmup.unwrap_or_else(|| estimated_fill_iters(cfg));
    let variants = [Variant::Off, Variant::Full, Variant::Centers]
        .into_iter()
        .map(|v| time_variant(cfg, &data, v, n_iters, warmup))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TimingReport {
        config_hash: cfg.hash(),
        variants,
    })
}
