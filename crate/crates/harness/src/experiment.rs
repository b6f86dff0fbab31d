//! Data preparation, the training loop with periodic evaluation, and run
//! directories.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use prism_core::dataeval::{generate_synthetic, retrieval_report, Dataset, NoiseIdCounter, RetrievalReport};
use prism_core::noise::NoisyLabeling;
use prism_core::numkit::normalize_rows;
use prism_core::train::{StepReport, Trainer};

use crate::config::{DataSource, ExperimentConfig};
use crate::formats;
use crate::HarnessError;

/// Train and test splits plus the (possibly corrupted) training labels.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub noisy: NoisyLabeling,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let (train, test) = match cfg.data.source {
        DataSource::Synthetic => {
            let all = generate_synthetic(&cfg.data.synthetic_spec(cfg.seed))?;
            all.split_by_class(cfg.data.classes)?
        }
        DataSource::File => {
            let tr = cfg.data.train_file.as_deref().expect("validated");
            let te = cfg.data.test_file.as_deref().expect("validated");
            (
                formats::read_dataset(tr, prism_core::dataeval::Split::Train)?,
                formats::read_dataset(te, prism_core::dataeval::Split::Test)?,
            )
        }
    };
    if train.dim() != cfg.data.d_in || test.dim() != cfg.data.d_in {
        return Err(HarnessError::Config(format!(
            "data.d_in = {} but the data has {} (train) / {} (test) columns",
            cfg.data.d_in,
            train.dim(),
            test.dim()
        )));
    }
    let noisy = match cfg.noise.spec(cfg.seed) {
        None => NoisyLabeling::identity(&train.labels),
        Some(spec) => {
            let unit = normalize_rows(&train.features)?;
            spec.apply(&unit, &train.labels, train.num_classes)?
        }
    };
    Ok(PreparedData { train, test, noisy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: u64,
    /// Mean loss over the steps since the previous row that produced one.
    pub loss: Option<f64>,
    pub precision_at_1: f64,
    pub map_at_r: f64,
    pub noise_precision: f64,
    pub noise_recall: f64,
    /// `None` while the threshold is still the keep-all sentinel.
    pub threshold: Option<f64>,
    pub bank_len: usize,
    pub ms_per_iter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision_at_1: f64,
    pub map_at_r: f64,
    pub noise_precision: f64,
    pub noise_recall: f64,
    pub noise_f1: f64,
    pub flagged: u64,
    pub decisions: u64,
    pub corrupted_fraction: f64,
    pub changed_fraction: f64,
    pub skipped_updates: u64,
    pub iterations: u64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub rows: Vec<EvalRow>,
    pub summary: Summary,
}

impl RunRecord {
    /// The record with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.ms_per_iter = 0.0);
        r.summary.total_ms = 0.0;
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterLogRow {
    pub iteration: u64,
    pub sample_id: usize,
    pub p_clean: f64,
    pub threshold: f64,
    pub decision: &'static str,
}

pub struct RunOutput {
    pub record: RunRecord,
    pub trainer: Trainer,
    pub filter_log: Vec<FilterLogRow>,
}

pub fn evaluate(trainer: &Trainer, test: &Dataset) -> Result<RetrievalReport, HarnessError> {
    let emb = trainer.embed(&test.features)?;
    Ok(retrieval_report(&emb, &test.labels)?)
}

fn record_decisions(
    report: &StepReport,
    noisy: &NoisyLabeling,
    counter: &mut NoiseIdCounter,
    log: Option<&mut Vec<FilterLogRow>>,
) {
    let mut flagged = vec![false; report.batch.len()];
    report.partition.noisy.iter().for_each(|&i| flagged[i] = true);
    for (pos, &id) in report.batch.iter().enumerate() {
        counter.record(flagged[pos], noisy.corrupted_mask[id]);
    }
    if let Some(log) = log {
        for (pos, &id) in report.batch.iter().enumerate() {
            log.push(FilterLogRow {
                iteration: report.iteration,
                sample_id: id,
                p_clean: report.scores.p[pos],
                threshold: report.threshold,
                decision: if flagged[pos] { "noisy" } else { "clean" },
            });
        }
    }
}

/// Trains for `optimizer.total_iters` iterations on prepared data.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunOutput, HarnessError> {
    let mut trainer = Trainer::new(cfg.trainer_config(), &data.noisy.labels, data.train.num_classes)?;
    let total = cfg.optimizer.total_iters;
    let mut counter = NoiseIdCounter::default();
    let mut log = Vec::new();
    let mut rows = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    let mut skipped = 0u64;
    let start = Instant::now();
    let mut seg_start = Instant::now();
    let mut seg_iters = 0u64;
    for it in 0..total {
        let report = trainer.step(&data.train.features, &data.noisy.labels)?;
        match report.loss {
            Some(l) => {
                loss_sum += l;
                loss_n += 1;
            }
            None => skipped += 1,
        }
        record_decisions(&report, &data.noisy, &mut counter, cfg.filter_log.then_some(&mut log));
        seg_iters += 1;
        if (it + 1) % cfg.eval_every == 0 || it + 1 == total {
            let ms = seg_start.elapsed().as_secs_f64() * 1e3 / seg_iters as f64;
            let rep = evaluate(&trainer, &data.test)?;
            let m = counter.metrics();
            rows.push(EvalRow {
                iteration: it + 1,
                loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                precision_at_1: rep.precision_at_1,
                map_at_r: rep.map_at_r,
                noise_precision: m.precision,
                noise_recall: m.recall,
                threshold: report.threshold.is_finite().then_some(report.threshold),
                bank_len: report.bank_len,
                ms_per_iter: ms,
            });
            loss_sum = 0.0;
            loss_n = 0;
            seg_iters = 0;
            seg_start = Instant::now();
        }
    }
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let last = rows.last().cloned();
    let m = counter.metrics();
    let n = data.noisy.len().max(1) as f64;
    let summary = Summary {
        precision_at_1: last.as_ref().map_or(0.0, |r| r.precision_at_1),
        map_at_r: last.as_ref().map_or(0.0, |r| r.map_at_r),
        noise_precision: m.precision,
        noise_recall: m.recall,
        noise_f1: m.f1,
        flagged: counter.true_pos + counter.false_pos,
        decisions: counter.true_pos + counter.false_pos + counter.true_neg + counter.false_neg,
        corrupted_fraction: data.noisy.corrupted_count() as f64 / n,
        changed_fraction: data.noisy.changed_count() as f64 / n,
        skipped_updates: skipped,
        iterations: total,
        total_ms,
    };
    Ok(RunOutput {
        record: RunRecord {
            config_hash: cfg.hash(),
            rows,
            summary,
        },
        trainer,
        filter_log: log,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let data = prepare_data(cfg)?;
    Ok(run_prepared(cfg, &data)?.record)
}

pub fn write_metrics_csv(path: &Path, rows: &[EvalRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "loss",
        "precision_at_1",
        "map_at_r",
        "noise_precision",
        "noise_recall",
        "threshold",
        "bank_len",
        "ms_per_iter",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            opt(r.loss),
            r.precision_at_1.to_string(),
            r.map_at_r.to_string(),
            r.noise_precision.to_string(),
            r.noise_recall.to_string(),
            opt(r.threshold),
            r.bank_len.to_string(),
            r.ms_per_iter.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_filter_log(path: &Path, rows: &[FilterLogRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<root>/<config hash>/` with the config, record, metrics, optional
/// filter log and a checkpoint. Returns the directory.
pub fn write_run_dir(root: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<PathBuf, HarnessError> {
    let dir = root.join(&out.record.config_hash);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    std::fs::write(
        dir.join("record.json"),
        serde_json::to_string_pretty(&out.record)? + "\n",
    )?;
    write_metrics_csv(&dir.join("metrics.csv"), &out.record.rows)?;
    if cfg.filter_log {
        write_filter_log(&dir.join("filter_log.csv"), &out.filter_log)?;
    }
    formats::write_checkpoint(&dir.join("checkpoint.bin"), out.trainer.net(), Some(out.trainer.bank()))?;
    Ok(dir)
}
