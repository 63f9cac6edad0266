use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lilkit::coupling::{CouplingSpec, DiagnosticsConfig};
use lilkit::ergodicity::DecayConfig;
use lilkit::gene_model::{CheckConfig, DriftConfig};
use lilkit::kernel::NoiseDist;
use lilkit::lil::{ChiConfig, LilConfig, Seminorm, TrendConfig};
use lilkit::{GeneModelSpec, Point};
use serde::{Deserialize, Serialize};

/// Environment variables with this prefix override config keys;
/// `__` separates nested sections (`LILKIT_RUN__SEED=7`).
pub const ENV_PREFIX: &str = "LILKIT_";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    GeneReference,
    Gene { spec: Box<GeneModelSpec> },
    Rademacher,
    Iid {
        atoms: Vec<f64>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Ar1 { kappa: f64, noise: NoiseDist },
}

impl ModelConfig {
    pub fn is_gene(&self) -> bool {
        matches!(self, ModelConfig::GeneReference | ModelConfig::Gene { .. })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Trajectory length for `lil` and `simulate`.
    pub n: Option<usize>,
    /// Ensemble size for `lil` and `ergodicity`.
    pub trajectories: Option<usize>,
    pub burn_in: usize,
    pub thinning: usize,
    /// Atoms kept for the invariant-measure estimate.
    pub invariant_atoms: usize,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, n: None, trajectories: None, burn_in: 1000, thinning: 5, invariant_atoms: 20_000, workers: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        self != Format::Json
    }

    pub fn json(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), format: Format::Both }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub check_conditions: CheckTask,
    pub coupling: CouplingTask,
    pub ergodicity: ErgodicityTask,
    pub lil: LilTask,
    pub simulate: SimulateTask,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckTask {
    pub check: CheckConfig,
    pub drift: DriftConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GConfig {
    Coordinate { index: usize },
    Clamped { index: usize, lo: f64, hi: f64 },
    Constant { value: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingTask {
    pub spec: CouplingSpec,
    pub diagnostics: DiagnosticsConfig,
    pub drift: DriftConfig,
    pub start_pairs: Vec<(Point, Point)>,
    pub decay_start: (Point, Point),
    pub decay_grid: Vec<usize>,
    pub decay_g: GConfig,
    pub decay_trajectories: usize,
    pub decay: DecayConfig,
}

impl Default for CouplingTask {
    fn default() -> Self {
        Self {
            spec: CouplingSpec::default(),
            diagnostics: DiagnosticsConfig::default(),
            drift: DriftConfig::default(),
            start_pairs: vec![
                (Point::scalar(1.0, 1), Point::scalar(2.0, 1)),
                (Point::scalar(0.0, 1), Point::scalar(4.0, 2)),
            ],
            decay_start: (Point::scalar(0.0, 1), Point::scalar(4.0, 1)),
            decay_grid: (0..=20).collect(),
            decay_g: GConfig::Clamped { index: 0, lo: 0.0, hi: 1.0 },
            decay_trajectories: 1000,
            decay: DecayConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicityTask {
    /// Start pair; model-dependent default.
    pub x: Option<Point>,
    pub y: Option<Point>,
    pub grid: Vec<usize>,
    pub decay: DecayConfig,
    pub check_invariant: bool,
}

impl Default for ErgodicityTask {
    fn default() -> Self {
        Self { x: None, y: None, grid: (0..=10).collect(), decay: DecayConfig::default(), check_invariant: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailConfig {
    /// `(c~, q)` from an `ergodic_decay` fit between `x` and `y`.
    Decay { x: Point, y: Point, grid: Vec<usize>, trajectories: usize },
    Fixed {
        c_tilde: f64,
        q: f64,
        #[serde(default)]
        seminorm: Seminorm,
        #[serde(default)]
        reference: Option<Point>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LilTask {
    pub g: Option<GConfig>,
    pub tail: Option<TailConfig>,
    pub chi: ChiConfig,
    /// `n` and `n_traj` come from the run section when set there.
    pub config: LilConfig,
    pub identity_states: usize,
    pub identity_samples: usize,
    pub trend: Option<TrendConfig>,
}

impl Default for LilTask {
    fn default() -> Self {
        Self {
            g: None,
            tail: None,
            chi: ChiConfig::default(),
            config: LilConfig::default(),
            identity_states: 10,
            identity_samples: 20_000,
            trend: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateTask {
    pub start: Option<Point>,
}

fn env_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `LILKIT_A__B__C=value` as `a.b.c = value`.
pub fn apply_env(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<()> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            bail!("malformed override variable {key}");
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node.entry(part.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = match entry {
                toml::Value::Table(t) => t,
                _ => bail!("override {key}: {part} is not a section"),
            };
        }
        node.insert(path[path.len() - 1].clone(), env_value(&raw));
    }
    Ok(())
}

pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<ExperimentConfig> {
    let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
    apply_env(&mut table, env)?;
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into().context("config does not match the schema")?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text, std::env::vars())
}

fn validate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    if cfg.run.workers == 0 {
        bail!("run.workers must be >= 1");
    }
    if cfg.run.thinning == 0 || cfg.run.burn_in == 0 || cfg.run.invariant_atoms < 2 {
        bail!("run.burn_in and run.thinning must be >= 1 and run.invariant_atoms >= 2");
    }
    if let Some(n) = cfg.run.n {
        if n < 3 {
            bail!("run.n must be >= 3");
        }
    }
    if let Some(t) = cfg.run.trajectories {
        if t < 2 {
            bail!("run.trajectories must be >= 2");
        }
    }
    Ok(())
}
