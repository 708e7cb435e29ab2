//! Experiment configuration: JSON with a schema version and strict keys.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Cell,
    W2,
    Simulate,
    Resolve,
    Converge,
    Operators,
    Hydro,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Cell => "cell",
            Kind::W2 => "w2",
            Kind::Simulate => "simulate",
            Kind::Resolve => "resolve",
            Kind::Converge => "converge",
            Kind::Operators => "operators",
            Kind::Hydro => "hydro",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, rename = "macro")]
    pub macro_: MacroConfig,
    #[serde(default)]
    pub cell: CellConfig,
    #[serde(default)]
    pub value: ValueConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub terminal: TerminalConfig,
    #[serde(default)]
    pub resolve: ResolveConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
    #[serde(default)]
    pub table: TableConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<W2Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operators: Option<OperatorsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hydro: Option<HydroConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridConfig {
    fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Free,
    Quadratic,
    Tabulated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    Zero,
    Sin2 {
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub potential: PotentialConfig,
    /// Growth constants `−c + |p|²/C ≤ H ≤ c + C|p|²`; derived when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub big_c: Option<f64>,
    /// Momentum grid of the tabulated kind.
    pub pgrid: GridConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Free,
            dim: 1,
            potential: PotentialConfig::Sin2 { amplitude: 1.0 },
            c: None,
            big_c: None,
            pgrid: GridConfig::new(-8.0, 8.0, 801),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ConfinementConfig {
    Zero,
    LogGrowth { u0: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InteractionConfig {
    Zero,
    Gaussian { v0: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    #[serde(rename = "U")]
    pub u: ConfinementConfig,
    #[serde(rename = "V")]
    pub v: InteractionConfig,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            u: ConfinementConfig::Zero,
            v: InteractionConfig::Zero,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    pub modes: usize,
    pub qgrid: usize,
    #[serde(rename = "Pgrid")]
    pub p_grid: GridConfig,
    pub tol: f64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            modes: 8,
            qgrid: 128,
            p_grid: GridConfig::new(-2.0, 2.0, 21),
            tol: 1e-10,
            restarts: 8,
            max_iter: 400,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueConfig {
    pub alpha: f64,
    pub knots: usize,
    pub tmax_tol: f64,
    pub restarts: usize,
    pub max_iter: usize,
    pub refine_tol: f64,
    pub max_knots: usize,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            knots: 16,
            tmax_tol: 1e-6,
            restarts: 4,
            max_iter: 2000,
            refine_tol: 1e-4,
            max_knots: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    /// Explicit `ε_N`, one per entry of `N`; otherwise `N^{−exponent}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    pub exponent: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            n: vec![4, 8, 16, 32],
            eps: None,
            exponent: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub dt: f64,
    pub steps: usize,
    pub eps: f64,
    /// Seed of the initial state; the root seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub particles: usize,
    pub stride: usize,
    pub x_sd: f64,
    pub p_sd: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            steps: 1000,
            eps: 0.1,
            seed: None,
            particles: 8,
            stride: 10,
            x_sd: 1.0,
            p_sd: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Constant,
    NegDistSquared,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminalConfig {
    pub kind: TerminalKind,
    /// Level of the constant kind.
    pub value: f64,
    /// `h = −(a/2) d²(·, γ)`.
    pub a: f64,
    /// Atoms of γ, one row each; a normal quantile sample when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Vec<f64>>>,
    pub reference_mean: f64,
    pub reference_sd: f64,
    pub reference_atoms: usize,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        Self {
            kind: TerminalKind::NegDistSquared,
            value: 0.0,
            a: 1.0,
            reference: None,
            reference_mean: 1.0,
            reference_sd: 0.5,
            reference_atoms: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolveConfig {
    /// Initial configuration, one row per particle.
    pub x: Vec<Vec<f64>>,
    /// Also evaluate the continuum resolvent at the empirical measure of `x`.
    pub continuum: bool,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        Self {
            x: vec![vec![0.3], vec![-1.2], vec![2.0]],
            continuum: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    /// Normal reference density on the line.
    pub mean: f64,
    pub sd: f64,
    pub continuum_atoms: usize,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            mean: 0.0,
            sd: 1.0,
            continuum_atoms: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableConfig {
    /// Momentum grid per axis.
    pub p: GridConfig,
    /// Velocity grid per axis.
    pub v: GridConfig,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            p: GridConfig::new(-8.0, 8.0, 1601),
            v: GridConfig::new(-5.0, 5.0, 201),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W2Config {
    pub a: String,
    pub b: String,
    #[serde(default = "two")]
    pub p: f64,
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsConfig {
    pub instance: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestsConfig {
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroConfig {
    pub trajectory: String,
    pub bins: BinsConfig,
    pub tests: TestsConfig,
    /// Include the force term `ρ∇(U + 2V∗ρ)` in the momentum residual.
    #[serde(default = "yes")]
    pub source: bool,
}

fn yes() -> bool {
    true
}

/// Operator instance file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub atoms: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<Vec<f64>>>,
    pub psi: PsiConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PsiConfig {
    Linear { a: Vec<f64> },
    Capped { a: Vec<f64>, cap: f64 },
}

/// Deserialize strictly, reporting the dotted key path of the first problem.
pub fn strict<T: serde::de::DeserializeOwned>(value: serde_json::Value, what: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // unknown keys are reported at their parent; append the key itself
        let full = match unknown_key(&inner) {
            Some(key) if path == "." => key.to_string(),
            Some(key) if path != key && !path.ends_with(&format!(".{key}")) => format!("{path}.{key}"),
            _ => path,
        };
        anyhow!("invalid {what}: key `{full}`: {inner}")
    })
}

fn unknown_key(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let version = raw
            .get("schema_version")
            .ok_or_else(|| anyhow!("config lacks `schema_version`"))?;
        match version.as_u64() {
            Some(SCHEMA_VERSION) => {}
            _ => bail!("unsupported schema_version {version}; this build reads version {SCHEMA_VERSION}"),
        }
        strict(raw, "config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text)
    }
}

/// Resolve a path in the config relative to the config file's directory.
pub fn relative_to(config: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config.parent().map_or_else(|| p.to_path_buf(), |d| d.join(p))
}
