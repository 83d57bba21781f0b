//! Flat `key = value` experiment configuration.
//!
//! Values are resolved in three layers: built-in defaults, then the config
//! file, then command-line flags. Every key below is also a flag with the
//! underscores turned into dashes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use faraccel::attack::{AttackConfig, AttackerView, Objective};
use faraccel::compiler::{FarConfig, DEFAULT_BUDGET_FRACTION, DEFAULT_DEADNESS_RATIO};
use faraccel::dpe::DpeConfig;
use faraccel::model::{Activation, DatasetSpec, TrainConfig};
use faraccel::system::SystemConfig;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// FMDL to read instead of the one the previous stage wrote.
    pub model: Option<PathBuf>,

    pub classes: usize,
    pub informative_dims: usize,
    pub dead_dims: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub offset: f64,
    pub noise: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,

    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,

    pub budget_fraction: f64,
    pub div: u8,
    pub deadness_ratio: f64,
    pub emit_skips: bool,

    pub overlap: bool,
    pub dual_port: bool,
    pub amortize_fill: bool,
    pub pe_count: usize,
    pub dma_bytes_per_cycle: u64,
    pub tile_buffer_depth: usize,

    pub top_n: usize,
    pub flip_budget: usize,
    /// Accuracy the attack must reach; chance plus ten points when unset.
    pub objective_accuracy: Option<f64>,
    pub attacker_view: AttackerView,
    pub trials: usize,
    pub attack_batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let train = TrainConfig::default();
        let sys = SystemConfig::default();
        let attack = AttackConfig::default();
        Self {
            seed: data.seed,
            out_dir: PathBuf::from("farbench-out"),
            model: None,
            classes: data.classes,
            informative_dims: data.informative_dims,
            dead_dims: data.dead_dims,
            samples_per_class: data.samples_per_class,
            separation: data.separation,
            offset: data.offset,
            noise: data.noise,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            momentum: train.momentum,
            budget_fraction: DEFAULT_BUDGET_FRACTION,
            div: 2,
            deadness_ratio: DEFAULT_DEADNESS_RATIO,
            emit_skips: false,
            overlap: sys.dpe.overlap_select,
            dual_port: sys.dpe.dual_port_weights,
            amortize_fill: sys.dpe.amortize_fill,
            pe_count: sys.pe_count,
            dma_bytes_per_cycle: sys.dma_bytes_per_cycle,
            tile_buffer_depth: sys.tile_buffer_depth,
            top_n: attack.top_n,
            flip_budget: attack.flip_budget,
            objective_accuracy: None,
            attacker_view: attack.attacker_view,
            trials: 5,
            attack_batch: 64,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed", "out_dir", "model", "classes", "informative_dims", "dead_dims", "samples_per_class", "separation", "offset",
    "noise", "hidden", "activation", "epochs", "learning_rate", "batch_size", "momentum", "budget_fraction", "div",
    "deadness_ratio", "emit_skips", "overlap", "dual_port", "amortize_fill", "pe_count", "dma_bytes_per_cycle",
    "tile_buffer_depth", "top_n", "flip_budget", "objective_accuracy", "attacker_view", "trials", "attack_batch",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "identity" => Ok(Activation::Identity),
        "relu" => Ok(Activation::Relu),
        "gelu" => Ok(Activation::Gelu),
        _ => bail!("activation must be identity, relu or gelu, got {s:?}"),
    }
}

pub fn parse_view(s: &str) -> Result<AttackerView> {
    match s {
        "vanilla" => Ok(AttackerView::VanillaOverDram),
        "far-aware" => Ok(AttackerView::FarAware),
        _ => bail!("attacker_view must be vanilla or far-aware, got {s:?}"),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "model" => self.model = Some(PathBuf::from(v)),
            "classes" => self.classes = parse(key, v)?,
            "informative_dims" => self.informative_dims = parse(key, v)?,
            "dead_dims" => self.dead_dims = parse(key, v)?,
            "samples_per_class" => self.samples_per_class = parse(key, v)?,
            "separation" => self.separation = parse(key, v)?,
            "offset" => self.offset = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?
                }
            }
            "activation" => self.activation = parse_activation(v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "budget_fraction" => self.budget_fraction = parse(key, v)?,
            "div" => self.div = parse(key, v)?,
            "deadness_ratio" => self.deadness_ratio = parse(key, v)?,
            "emit_skips" => self.emit_skips = parse(key, v)?,
            "overlap" => self.overlap = parse(key, v)?,
            "dual_port" => self.dual_port = parse(key, v)?,
            "amortize_fill" => self.amortize_fill = parse(key, v)?,
            "pe_count" => self.pe_count = parse(key, v)?,
            "dma_bytes_per_cycle" => self.dma_bytes_per_cycle = parse(key, v)?,
            "tile_buffer_depth" => self.tile_buffer_depth = parse(key, v)?,
            "top_n" => self.top_n = parse(key, v)?,
            "flip_budget" => self.flip_budget = parse(key, v)?,
            "objective_accuracy" => self.objective_accuracy = Some(parse(key, v)?),
            "attacker_view" => self.attacker_view = parse_view(v)?,
            "trials" => self.trials = parse(key, v)?,
            "attack_batch" => self.attack_batch = parse(key, v)?,
            _ => bail!("unknown config key {key:?}; known keys: {}", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Applies a config file. Blank lines and `#` comments are ignored;
    /// a key may appear once.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key = value", path.display(), n + 1);
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                bail!("{}:{}: duplicate key {key:?}", path.display(), n + 1);
            }
            self.set(key, value).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if !(2..=3).contains(&self.div) {
            bail!("div must be 2 or 3, got {}", self.div);
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            bail!("budget_fraction must lie in [0, 1], got {}", self.budget_fraction);
        }
        if self.classes < 2 {
            bail!("classes must be at least 2");
        }
        if self.informative_dims == 0 {
            bail!("informative_dims must be at least 1");
        }
        if self.hidden.contains(&0) {
            bail!("hidden widths must be positive");
        }
        if let Some(a) = self.objective_accuracy {
            if !(0.0..=1.0).contains(&a) {
                bail!("objective_accuracy must lie in [0, 1], got {a}");
            }
        }
        if self.trials == 0 || self.attack_batch == 0 {
            bail!("trials and attack_batch must be at least 1");
        }
        if let Some(m) = &self.model {
            if !m.exists() {
                bail!("model file {} does not exist", m.display());
            }
        }
        self.system().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    pub fn dataset(&self) -> DatasetSpec {
        DatasetSpec {
            classes: self.classes,
            informative_dims: self.informative_dims,
            dead_dims: self.dead_dims,
            samples_per_class: self.samples_per_class,
            separation: self.separation,
            offset: self.offset,
            noise: self.noise,
            seed: self.seed,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.informative_dims + self.dead_dims];
        d.extend(&self.hidden);
        d.push(self.classes);
        d
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed: self.seed,
        }
    }

    pub fn far(&self) -> FarConfig {
        FarConfig {
            budget_fraction: self.budget_fraction,
            div: self.div,
            deadness_ratio: self.deadness_ratio,
            emit_skips: self.emit_skips,
            layer_id: 0,
        }
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            pe_count: self.pe_count,
            dma_bytes_per_cycle: self.dma_bytes_per_cycle,
            tile_buffer_depth: self.tile_buffer_depth,
            dpe: DpeConfig {
                overlap_select: self.overlap,
                dual_port_weights: self.dual_port,
                amortize_fill: self.amortize_fill,
                ..Default::default()
            },
        }
    }

    pub fn objective(&self) -> f64 {
        self.objective_accuracy.unwrap_or(1.0 / self.classes as f64 + 0.1)
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            top_n: self.top_n,
            flip_budget: self.flip_budget,
            objective: Objective::AccuracyAtMost(self.objective()),
            attacker_view: self.attacker_view,
            seed: self.seed,
            ..Default::default()
        }
    }
}
