//! Run configuration: TOML (or JSON) files with strict schemas and
//! dotted-key overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scatterlab::family::ProfileFamily;
use scatterlab::geometry::{Profile, ProfileSpec};
use scatterlab::operators::Denominator;
use scatterlab::scattering::{HiddenLaw, DEFAULT_MAX_RESAMPLES};

/// A rejected configuration, with the dotted path of the offending field when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            field: None,
            message: message.into(),
        }
    }

    /// Attaches `section` to a core parameter error, e.g. `hidden.sigma2`.
    pub fn from_core(section: &str, err: scatterlab::Error) -> Self {
        match err {
            scatterlab::Error::InvalidParameter { name, reason } => Self::new(format!("{section}.{name}"), reason),
            other => Self::new(section, other.to_string()),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimulateChain,
    SimulateSde,
    ComputeMatrices,
    VerifyGenerator,
    StationaryTest,
    ChainVsSde,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SimulateChain => "simulate-chain",
            Experiment::SimulateSde => "simulate-sde",
            Experiment::ComputeMatrices => "compute-matrices",
            Experiment::VerifyGenerator => "verify-generator",
            Experiment::StationaryTest => "stationary-test",
            Experiment::ChainVsSde => "chain-vs-sde",
        }
    }
}

/// Law of the hidden velocities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HiddenSpec {
    #[default]
    None,
    /// Give either `sigma2` directly or, for a moving wall, the wall
    /// temperature `sigma0_sq`, converted with the mass and period ratios.
    Gaussian {
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma2: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma0_sq: Option<f64>,
    },
    Uniform { k: usize, half_width: f64 },
}

impl HiddenSpec {
    /// Builds the law; `profile` is needed only for `sigma0_sq`.
    pub fn build(&self, profile: Option<&Profile>) -> Result<HiddenLaw, ConfigError> {
        let law = match *self {
            HiddenSpec::None => Ok(HiddenLaw::none()),
            HiddenSpec::Gaussian { k, sigma2, sigma0_sq } => {
                let variance = match (sigma2, sigma0_sq) {
                    (Some(s), None) => s,
                    (None, Some(s0)) => {
                        if !(s0.is_finite() && s0 > 0.0) {
                            return Err(ConfigError::new("hidden.sigma0_sq", "must be positive"));
                        }
                        match profile {
                            Some(Profile::MovingWall(p)) => p.hidden_variance(s0),
                            _ => {
                                return Err(ConfigError::new(
                                    "hidden.sigma0_sq",
                                    "only meaningful for a moving_wall profile; give sigma2 instead",
                                ))
                            }
                        }
                    }
                    _ => return Err(ConfigError::new("hidden", "give exactly one of sigma2 and sigma0_sq")),
                };
                HiddenLaw::gaussian(k, variance)
            }
            HiddenSpec::Uniform { k, half_width } => HiddenLaw::uniform(k, half_width),
        };
        law.map_err(|e| ConfigError::from_core("hidden", e))
    }
}

/// Diffusion model for `simulate-sde` and `chain-vs-sde`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// General limit with a full `(n+1) x (n+1)` matrix `lambda`, hidden
    /// coordinates first, and the `[hidden]` law.
    Mb { lambda: Vec<Vec<f64>> },
    /// Diffusion on the unit ball with the given diagonal `lambdas`.
    Legendre { lambdas: Vec<f64> },
    /// Speed diffusion `dV = 2 k v0 sigma2 (1/V - V/sigma2) dt + sqrt(4 k v0 sigma2) dB`.
    Laguerre { k: f64, v0: f64, sigma2: f64 },
    /// `dV = (1/V - V) dt + sqrt(2) dB`.
    NormalizedLaguerre,
    /// The limit of the `[family]` section with the `[hidden]` law.
    Family,
}

fn default_record_every() -> u64 {
    1
}

fn default_max_resamples() -> u32 {
    DEFAULT_MAX_RESAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub steps: u64,
    /// Observed velocity at step 0; drawn from the stationary law (unit speed
    /// when nothing is hidden) if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default = "default_max_resamples")]
    pub max_resamples: u32,
}

fn default_paths() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub dt: f64,
    pub steps: u64,
    pub initial: Vec<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// More than one path switches to ensemble output (final states only).
    #[serde(default = "default_paths")]
    pub paths: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_halvings: Option<u32>,
}

fn default_points_per_dim() -> usize {
    1000
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_max_points_per_dim() -> usize {
    16_000
}

fn default_fit_sequence() -> Vec<f64> {
    vec![0.02, 0.01, 0.005]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatricesSection {
    #[serde(default = "default_points_per_dim")]
    pub points_per_dim: usize,
    /// Grid doubling stops once successive estimates of `A` differ by less than this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_points_per_dim")]
    pub max_points_per_dim: usize,
    /// Flatness values for the `Lambda` fit of a family.
    #[serde(default = "default_fit_sequence")]
    pub h_sequence: Vec<f64>,
}

impl Default for MatricesSection {
    fn default() -> Self {
        Self {
            points_per_dim: default_points_per_dim(),
            tolerance: default_tolerance(),
            max_points_per_dim: default_max_points_per_dim(),
            h_sequence: default_fit_sequence(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Mb,
    Legendre,
    Laguerre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    Iid,
    Lattice,
}

fn default_max_samples() -> u64 {
    100_000_000
}

fn default_replicates() -> u32 {
    16
}

fn default_sampling() -> SamplingKind {
    SamplingKind::Lattice
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub h_sequence: Vec<f64>,
    /// Samples at flatness `h` are `ceil(n0 / h^2)`.
    pub n0: f64,
    #[serde(default = "default_max_samples")]
    pub max_samples: u64,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingKind,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    #[serde(default)]
    pub denominator: Denominator,
    pub operator: OperatorKind,
    /// Bump test function in the operator's coordinates.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Observed velocity at which the table is computed.
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    Angle,
    Speed,
}

impl Marginal {
    pub fn name(self) -> &'static str {
        match self {
            Marginal::Angle => "angle",
            Marginal::Speed => "speed",
        }
    }
}

fn default_marginals() -> Vec<Marginal> {
    vec![Marginal::Angle]
}

fn default_bins() -> usize {
    50
}

fn default_significance() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySection {
    #[serde(default = "default_marginals")]
    pub marginals: Vec<Marginal>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_significance")]
    pub significance: f64,
}

impl Default for StationarySection {
    fn default() -> Self {
        Self {
            marginals: default_marginals(),
            bins: default_bins(),
            significance: default_significance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub h_sequence: Vec<f64>,
    pub t_end: f64,
    pub paths: u64,
    pub initial: Vec<f64>,
    pub sde_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ProfileFamily>,
    #[serde(default)]
    pub hidden: HiddenSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<MatricesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationarySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, ConfigError> {
    section
        .as_ref()
        .ok_or_else(|| ConfigError::new(name, "section is required for this experiment"))
}

impl RunConfig {
    pub fn build_profile(&self) -> Result<Profile, ConfigError> {
        require(&self.profile, "profile")?
            .build()
            .map_err(|e| ConfigError::from_core("profile", e))
    }

    pub fn build_hidden(&self, profile: Option<&Profile>) -> Result<HiddenLaw, ConfigError> {
        self.hidden.build(profile)
    }

    /// Observed dimension `m = n + 1 - k` for a torus of dimension `n`.
    pub fn observed_dim(n: usize, hidden: &HiddenLaw) -> Result<usize, ConfigError> {
        hidden.observed_dim(n).map_err(|e| ConfigError::from_core("hidden", e))
    }

    pub fn validate_family(&self) -> Result<&ProfileFamily, ConfigError> {
        let fam = require(&self.family, "family")?;
        fam.validate().map_err(|e| ConfigError::from_core("family", e))?;
        Ok(fam)
    }
}

/// Parses a configuration file: `.json` as JSON, anything else as TOML.
pub fn load_value(path: &Path) -> Result<toml::Value, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    parse_value(&text, is_json)
}

pub fn parse_value(text: &str, is_json: bool) -> Result<toml::Value, ConfigError> {
    if is_json {
        let json: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::general(format!("invalid JSON: {e}")))?;
        toml::Value::try_from(json).map_err(|e| ConfigError::general(format!("unsupported JSON value: {e}")))
    } else {
        text.parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| ConfigError::general(format!("invalid TOML: {e}")))
    }
}

/// Applies `key=value`, where `key` is a dotted path and `value` a TOML value;
/// values that do not parse as TOML are taken as strings.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::general(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::general(format!("override `{assignment}` has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(key, format!("`{part}` is not inside a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::new(key, "parent is not a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Deserializes with strict schema checks, naming the offending field.
pub fn from_value(value: toml::Value) -> Result<RunConfig, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e: serde_path_to_error::Error<toml::de::Error>| {
        let path = e.path().to_string();
        let message = e.into_inner().message().trim().to_string();
        if path == "." || path.is_empty() {
            ConfigError::general(message)
        } else {
            ConfigError::new(path, message)
        }
    })
}
