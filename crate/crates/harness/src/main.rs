use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use prism_harness::config::ExperimentConfig;
use prism_harness::experiment::{prepare_data, run_prepared, write_run_dir};
use prism_harness::{formats, sweep, timing, HarnessError};

#[derive(Parser)]
#[command(name = "prism", version, about = "Noise-resistant metric learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set prism.rate=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.set),
            None => ExperimentConfig::from_overrides(&self.set),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Bin,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured train and test splits as feature files.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "bin")]
        format: FileFormat,
    },
    /// Apply the configured noise model to a feature file's labels.
    AddNoise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        /// Noisy-label CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and write a run directory named by config hash.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Use these noisy labels instead of the configured noise model.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a one-parameter grid over seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dotted config key to vary.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Time iterations of the off, full and centers variants after bank fill.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 200)]
        iters: u64,
        /// Minimum warmup; defaults to the estimated bank-fill count.
        #[arg(long)]
        warmup: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json(v: &impl serde::Serialize) -> Result<(), HarnessError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, out: &Path, format: FileFormat) -> Result<(), HarnessError> {
    let data = prepare_data(cfg)?;
    std::fs::create_dir_all(out)?;
    for (name, ds) in [("train", &data.train), ("test", &data.test)] {
        match format {
            FileFormat::Bin => formats::write_features(&out.join(format!("{name}.bin")), &ds.features, &ds.labels)?,
            FileFormat::Csv => formats::write_features_csv(&out.join(format!("{name}.csv")), &ds.features, &ds.labels)?,
        }
    }
    print_json(&json!({
        "train": data.train.len(),
        "test": data.test.len(),
        "dim": data.train.dim(),
    }))
}

fn add_noise(cfg: &ExperimentConfig, input: &Path, out: &Path) -> Result<(), HarnessError> {
    let ds = formats::read_dataset(input, prism_core::dataeval::Split::Train)?;
    let spec = cfg
        .noise
        .spec(cfg.seed)
        .ok_or_else(|| HarnessError::Config("noise.model is none".into()))?;
    let unit = prism_core::numkit::normalize_rows(&ds.features)?;
    let noisy = spec.apply(&unit, &ds.labels, ds.num_classes)?;
    formats::write_noisy_labels(out, &noisy)?;
    print_json(&json!({
        "samples": noisy.len(),
        "corrupted": noisy.corrupted_count(),
        "changed": noisy.changed_count(),
    }))
}

fn train(cfg: &ExperimentConfig, out: &Path, labels: Option<&Path>) -> Result<(), HarnessError> {
    let mut data = prepare_data(cfg)?;
    if let Some(p) = labels {
        let noisy = formats::read_noisy_labels(p)?;
        if noisy.original_labels != data.train.labels {
            return Err(HarnessError::Config(format!(
                "{} does not match the training split's labels",
                p.display()
            )));
        }
        if noisy.labels.iter().any(|&y| y >= data.train.num_classes) {
            return Err(HarnessError::Config(format!("{} has out-of-range labels", p.display())));
        }
        data.noisy = noisy;
    }
    let run = run_prepared(cfg, &data)?;
    let dir = write_run_dir(out, cfg, &run)?;
    let s = &run.record.summary;
    print_json(&json!({
        "run_dir": dir.display().to_string(),
        "precision_at_1": s.precision_at_1,
        "map_at_r": s.map_at_r,
        "noise_precision": s.noise_precision,
        "noise_recall": s.noise_recall,
    }))
}

fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(), HarnessError> {
    let data = prepare_data(cfg)?;
    let (net, _) = formats::read_checkpoint(checkpoint)?;
    if net.layout() != cfg.layout() {
        return Err(HarnessError::Config(format!(
            "checkpoint layout {:?} differs from the config's {:?}",
            net.layout(),
            cfg.layout()
        )));
    }
    let emb = net.embed(&data.test.features)?;
    let rep = prism_core::dataeval::retrieval_report(&emb, &data.test.labels)?;
    print_json(&json!({
        "precision_at_1": rep.precision_at_1,
        "map_at_r": rep.map_at_r,
    }))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenData { cfg, out, format } => gen_data(&cfg.load()?, &out, format),
        Command::AddNoise { cfg, input, out } => add_noise(&cfg.load()?, &input, &out),
        Command::Train { cfg, out, labels } => train(&cfg.load()?, &out, labels.as_deref()),
        Command::Eval { cfg, checkpoint } => eval(&cfg.load()?, &checkpoint),
        Command::Sweep {
            cfg,
            param,
            values,
            seeds,
            out,
            jobs,
        } => {
            let rows = sweep::sweep(&cfg.load()?, &param, &values, &seeds, Some(&out), jobs)?;
            let means: Vec<_> = sweep::mean_by_value(&rows)
                .into_iter()
                .map(|(v, p)| json!({ "value": v, "precision_at_1": p }))
                .collect();
            print_json(&json!({ "csv": out.join("sweep.csv").display().to_string(), "mean": means }))
        }
        Command::Bench {
            cfg,
            iters,
            warmup,
            out,
        } => {
            let rep = timing::time_iterations(&cfg.load()?, iters, warmup)?;
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_string_pretty(&rep)? + "\n")?;
            }
            print_json(&rep)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
