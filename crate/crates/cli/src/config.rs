//! Experiment configuration: one TOML file, any field overridable with
//! `--set section.field=value`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use uwb_tdoa::channel::{ChannelModel, Environment, Obstacle};
use uwb_tdoa::dataset::load_anchors;
use uwb_tdoa::nn::{ModelConfig, TrainConfig};
use uwb_tdoa::pipeline::BaselineOptions;
use uwb_tdoa::tdoa::{PairPolicy, SolverOptions};

use crate::sweep::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub environment: EnvironmentSection,
    pub simulation: SimulationSection,
    pub baseline: BaselineSection,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub sweep: SweepSection,
}


/// Starts from the built-in warehouse; each set field replaces that part.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub anchors_file: Option<PathBuf>,
    pub extent: Option<[f64; 3]>,
    pub obstacles: Option<Vec<Obstacle>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub tag_height: f64,
    pub drop_probability: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Spacing between consecutive trajectory points, meters.
    pub step: f64,
    pub channel: ChannelModel,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            tag_height: 1.0,
            drop_probability: 0.58,
            train_samples: 3000,
            eval_samples: 1000,
            step: 0.5,
            channel: ChannelModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub policy: PairPolicy,
    /// Solve in 2D with z fixed at `simulation.tag_height`.
    pub fix_z: bool,
    pub clamp_to_extent: bool,
    pub max_iterations: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            policy: PairPolicy::ReferenceAnchor,
            fix_z: true,
            clamp_to_extent: true,
            max_iterations: SolverOptions::default().max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Epoch cap per configuration; the full recipe uses `training.max_epochs`.
    pub epochs: usize,
    /// Use at most this many training / evaluation samples per configuration.
    pub train_samples: Option<usize>,
    pub eval_samples: Option<usize>,
    pub grid: GridSpec,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            epochs: 40,
            train_samples: None,
            eval_samples: None,
            grid: GridSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let mut value = toml::Value::try_from(&base)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .with_context(|| format!("override `{item}` is not key=value"))?;
            set_path(&mut value, key.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: Self = value.try_into().context("applying overrides")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.simulation.channel.validate()?;
        if !(0.0..1.0).contains(&self.simulation.drop_probability) {
            bail!("simulation.drop_probability must lie in [0, 1)");
        }
        if self.sweep.epochs == 0 {
            bail!("sweep.epochs must be positive");
        }
        self.sweep.grid.validate(&self.model)?;
        Ok(())
    }

    pub fn build_environment(&self) -> Result<Environment> {
        let mut env = Environment::default_warehouse();
        if let Some(path) = &self.environment.anchors_file {
            env.anchors = load_anchors(path)?;
        }
        if let Some(extent) = self.environment.extent {
            env.extent = extent;
        }
        if let Some(obstacles) = &self.environment.obstacles {
            env.obstacles = obstacles.clone();
        }
        env.validate()?;
        Ok(env)
    }

    pub fn baseline_options(&self) -> BaselineOptions {
        BaselineOptions {
            policy: self.baseline.policy,
            solver: SolverOptions {
                max_iterations: self.baseline.max_iterations,
                fixed_z: self.baseline.fix_z.then_some(self.simulation.tag_height),
                ..Default::default()
            },
            clamp_to_extent: self.baseline.clamp_to_extent,
        }
    }
}

/// Numbers, booleans and inline arrays/tables parse as TOML; anything else
/// is taken as a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("`{}` is not a section", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            // Optional fields are absent from the serialized defaults, so
            // new leaf keys are allowed; unknown ones fail at deserialization.
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    bail!("empty override key")
}
