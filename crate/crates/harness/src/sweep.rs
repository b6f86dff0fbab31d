//! One-parameter grids over several seeds, each point a full run.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{prepare_data, run_prepared, write_run_dir};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub config_hash: String,
    pub precision_at_1: f64,
    pub map_at_r: f64,
    pub noise_precision: f64,
    pub noise_recall: f64,
}

/// Runs `param = value` for every value and seed. With `out` set, each run
/// gets its own directory and a combined `sweep.csv` is written there.
/// `jobs > 1` runs points on that many threads; rows come back in grid order
/// regardless.
pub fn sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    seeds: &[u64],
    out: Option<&Path>,
    jobs: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut points = Vec::new();
    for v in values {
        for &s in seeds {
            let cfg = base.with_overrides(&[format!("{param}={v}"), format!("seed={s}")])?;
            points.push((v.clone(), s, cfg));
        }
    }
    let results: Mutex<Vec<Option<Result<SweepRow, HarnessError>>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    let worker = || loop {
        let i = {
            let mut n = next.lock().expect("lock");
            if *n == points.len() {
                return;
            }
            *n += 1;
            *n - 1
        };
        let (v, s, cfg) = &points[i];
        let row = (|| {
            let data = prepare_data(cfg)?;
            let run = run_prepared(cfg, &data)?;
            if let Some(root) = out {
                write_run_dir(root, cfg, &run)?;
            }
            let sm = &run.record.summary;
            Ok(SweepRow {
                param: param.to_string(),
                value: v.clone(),
                seed: *s,
                config_hash: run.record.config_hash.clone(),
                precision_at_1: sm.precision_at_1,
                map_at_r: sm.map_at_r,
                noise_precision: sm.noise_precision,
                noise_recall: sm.noise_recall,
            })
        })();
        results.lock().expect("lock")[i] = Some(row);
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, points.len().max(1)) {
            scope.spawn(worker);
        }
    });
    let rows = results
        .into_inner()
        .expect("lock")
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(root) = out {
        std::fs::create_dir_all(root)?;
        let mut w = csv::Writer::from_path(root.join("sweep.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Mean P@1 per value, in the order values first appear.
pub fn mean_by_value(rows: &[SweepRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(v, _, _)| *v == r.value) {
            Some(e) => {
                e.1 += r.precision_at_1;
                e.2 += 1;
            }
            None => out.push((r.value.clone(), r.precision_at_1, 1)),
        }
    }
    out.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect()
}
