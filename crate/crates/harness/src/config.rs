//! Experiment configuration: TOML or JSON on disk, dotted-path overrides,
//! validation against every module's preconditions, and a content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prism_core::dataeval::SyntheticSpec;
use prism_core::losses::ContrastiveParams;
use prism_core::model::{Layout, OptState};
use prism_core::noise::{NoiseModel, NoiseSpec};
use prism_core::prism::{Scoring, ThresholdMode, ThresholdState};
use prism_core::train::{LossKind, SoftTripleConfig, TrainerConfig};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Evaluate on the test split every this many iterations (and at the end).
    pub eval_every: u64,
    /// Write a per-sample filter log next to the run record.
    pub filter_log: bool,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub loss: LossConfig,
    pub prism: PrismConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerConfig,
    pub bank: BankConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            eval_every: 500,
            filter_log: false,
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            loss: LossConfig::default(),
            prism: PrismConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            sampler: SamplerConfig::default(),
            bank: BankConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    File,
}

/// Synthetic data draws `classes + test_classes` classes from one generator
/// and holds out the last `test_classes` for evaluation. File data reads the
/// two splits from feature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub test_classes: usize,
    pub per_class: usize,
    pub d_in: usize,
    pub center_scale: f64,
    pub cluster_std: f64,
    pub nuisance_dims: usize,
    pub nuisance_std: f64,
    /// Log-scale spread of per-class widths; `0` makes every class alike.
    pub std_spread: f64,
    /// Classes grouped into this many families of nearby centers; `0` for
    /// independent centers.
    pub families: usize,
    pub family_spread: f64,
    /// Generator seed; the experiment seed when absent.
    pub seed: Option<u64>,
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            classes: 50,
            test_classes: 50,
            per_class: 40,
            d_in: 32,
            center_scale: 1.0,
            cluster_std: 0.25,
            nuisance_dims: 16,
            nuisance_std: 0.6,
            std_spread: 0.0,
            families: 20,
            family_spread: 1.0,
            seed: None,
            train_file: None,
            test_file: None,
        }
    }
}

impl DataConfig {
    pub fn synthetic_spec(&self, fallback_seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes + self.test_classes,
            per_class: self.per_class,
            d_in: self.d_in,
            center_scale: self.center_scale,
            cluster_std: self.cluster_std,
            nuisance_dims: self.nuisance_dims,
            nuisance_std: self.nuisance_std,
            std_spread: self.std_spread,
            families: self.families,
            family_spread: self.family_spread,
            seed: self.seed.unwrap_or(fallback_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Symmetric,
    SmallCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub model: NoiseKind,
    pub rate: f64,
    pub z: usize,
    /// Noise seed; the experiment seed when absent.
    pub seed: Option<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            model: NoiseKind::None,
            rate: 0.25,
            z: 2,
            seed: None,
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self, fallback_seed: u64) -> Option<NoiseSpec> {
        let model = match self.model {
            NoiseKind::None => return None,
            NoiseKind::Symmetric => NoiseModel::Symmetric,
            NoiseKind::SmallCluster => NoiseModel::SmallCluster,
        };
        Some(NoiseSpec {
            model,
            rate: self.rate,
            z: self.z,
            seed: self.seed.unwrap_or(fallback_seed),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Contrastive,
    MemoryContrastive,
    SoftTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossName,
    /// Contrastive negative margin.
    pub margin: f64,
    pub proxies_per_class: usize,
    pub scale: f64,
    pub gamma: f64,
    pub soft_margin: f64,
    pub proxy_lr_mult: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let st = SoftTripleConfig::default();
        LossConfig {
            kind: LossName::MemoryContrastive,
            margin: 0.5,
            proxies_per_class: st.proxies_per_class,
            scale: st.scale,
            gamma: st.gamma,
            soft_margin: st.margin,
            proxy_lr_mult: st.lr_mult,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Off,
    Full,
    Centers,
    BatchPositive,
    MemoryPositive,
}

impl Variant {
    pub fn scoring(self) -> Scoring {
        match self {
            Variant::Off => Scoring::Off,
            Variant::Full => Scoring::Full,
            Variant::Centers => Scoring::Centers,
            Variant::BatchPositive => Scoring::BatchPositive,
            Variant::MemoryPositive => Scoring::MemoryPositive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Off => "off",
            Variant::Full => "full",
            Variant::Centers => "centers",
            Variant::BatchPositive => "batch_positive",
            Variant::MemoryPositive => "memory_positive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Trm,
    Strm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrismConfig {
    pub variant: Variant,
    pub mode: ModeName,
    /// Filtering rate R.
    pub rate: f64,
    /// Window τ for the smoothed threshold.
    pub window: usize,
}

impl Default for PrismConfig {
    fn default() -> Self {
        PrismConfig {
            variant: Variant::Centers,
            mode: ModeName::Strm,
            rate: 0.25,
            window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `0` for a single linear layer.
    pub hidden_dim: usize,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 0,
            embedding_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub total_iters: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-3,
            min_lr: 0.0,
            weight_decay: 1e-4,
            momentum: 0.0,
            total_iters: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub p: usize,
    pub k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { p: 4, k: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankConfig {
    pub capacity: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig { capacity: 2000 }
    }
}

fn config_err(msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(msg.to_string())
}

impl ExperimentConfig {
    /// Reads `.json` files as JSON and everything else as TOML, applies the
    /// `key.path=value` overrides in order, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let value: toml::Value = if path.extension().is_some_and(|e| e == "json") {
            let mut json: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            strip_nulls(&mut json);
            toml::Value::try_from(json).map_err(config_err)?
        } else {
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        };
        Self::from_value(value, overrides)
    }

    /// Defaults plus overrides, for runs without a config file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, HarnessError> {
        Self::from_value(toml::Value::Table(Default::default()), overrides)
    }

    /// A copy of `self` with further overrides applied and re-validated.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, HarnessError> {
        let value = toml::Value::try_from(self).map_err(config_err)?;
        Self::from_value(value, overrides)
    }

    fn from_value(mut value: toml::Value, overrides: &[String]) -> Result<Self, HarnessError> {
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = value.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn layout(&self) -> Layout {
        let d_in = self.data.d_in;
        if self.model.hidden_dim == 0 {
            Layout::linear(d_in, self.model.embedding_dim)
        } else {
            Layout::mlp(d_in, self.model.hidden_dim, self.model.embedding_dim)
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            layout: self.layout(),
            loss: match self.loss.kind {
                LossName::Contrastive => LossKind::Contrastive,
                LossName::MemoryContrastive => LossKind::MemoryContrastive,
                LossName::SoftTriple => LossKind::SoftTriple,
            },
            contrastive_margin: self.loss.margin,
            soft_triple: SoftTripleConfig {
                proxies_per_class: self.loss.proxies_per_class,
                scale: self.loss.scale,
                gamma: self.loss.gamma,
                margin: self.loss.soft_margin,
                lr_mult: self.loss.proxy_lr_mult,
            },
            scoring: self.prism.variant.scoring(),
            threshold_mode: match self.prism.mode {
                ModeName::Trm => ThresholdMode::Trm,
                ModeName::Strm => ThresholdMode::Strm,
            },
            filter_rate: self.prism.rate,
            window: self.prism.window,
            p: self.sampler.p,
            k: self.sampler.k,
            bank_capacity: self.bank.capacity,
            base_lr: self.optimizer.base_lr,
            min_lr: self.optimizer.min_lr,
            weight_decay: self.optimizer.weight_decay,
            momentum: self.optimizer.momentum,
            total_iters: self.optimizer.total_iters,
            seed: self.seed,
        }
    }

    /// Runs every precondition check the modules would otherwise only hit
    /// mid-run.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let core = |e: prism_core::Error| config_err(e);
        if self.eval_every == 0 {
            return Err(config_err("eval_every must be positive"));
        }
        match self.data.source {
            DataSource::Synthetic => {
                if self.data.test_classes < 2 {
                    return Err(config_err("data.test_classes must be at least 2"));
                }
                self.data.synthetic_spec(self.seed).validate().map_err(core)?;
                if self.data.classes < self.sampler.p {
                    return Err(config_err(format!(
                        "sampler.p = {} exceeds data.classes = {}",
                        self.sampler.p, self.data.classes
                    )));
                }
            }
            DataSource::File => {
                if self.data.train_file.is_none() || self.data.test_file.is_none() {
                    return Err(config_err("file data needs data.train_file and data.test_file"));
                }
            }
        }
        if let Some(spec) = self.noise.spec(self.seed) {
            spec.validate().map_err(core)?;
        }
        ContrastiveParams::new(self.loss.margin).map_err(core)?;
        if self.loss.kind == LossName::SoftTriple {
            let l = &self.loss;
            if l.proxies_per_class == 0 || !(l.scale > 0.0) || !(l.gamma > 0.0) || !(l.soft_margin >= 0.0) {
                return Err(config_err(
                    "soft triple needs proxies_per_class >= 1, scale > 0, gamma > 0, soft_margin >= 0",
                ));
            }
            if !(l.proxy_lr_mult >= 0.0) {
                return Err(config_err("loss.proxy_lr_mult must be non-negative"));
            }
        }
        let mode = match self.prism.mode {
            ModeName::Trm => ThresholdMode::Trm,
            ModeName::Strm => ThresholdMode::Strm,
        };
        ThresholdState::new(mode, self.prism.rate, self.prism.window).map_err(core)?;
        if self.model.embedding_dim == 0 || self.data.d_in == 0 {
            return Err(config_err("model dimensions must be positive"));
        }
        OptState::new(
            self.optimizer.base_lr,
            self.optimizer.min_lr,
            self.optimizer.total_iters,
            self.optimizer.weight_decay,
        )
        .map_err(core)?;
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(config_err("optimizer.momentum must be in [0, 1)"));
        }
        if self.sampler.p == 0 || self.sampler.k == 0 {
            return Err(config_err("sampler.p and sampler.k must be positive"));
        }
        if self.bank.capacity == 0 {
            return Err(config_err("bank.capacity must be positive"));
        }
        Ok(())
    }
}

/// TOML has no null; an absent key means the same thing.
fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|_, x| !x.is_null());
            map.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(xs) => xs.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `root`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), HarnessError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override `{assignment}` has an empty key")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{assignment}`: `{key}` is not a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| config_err(format!("override `{assignment}`: parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}
