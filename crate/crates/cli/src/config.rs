//! JSON run configuration.
//!
//! Every section except the inputs has defaults. Unknown keys are rejected
//! at every level. Relative input paths are resolved against the directory
//! containing the config file; command-line flags override config keys.

use std::path::{Path, PathBuf};

use qqr_core::bds::BdsConfig;
use qqr_core::dfm::DfmSpec;
use qqr_core::ingest::MissingPolicy;
use qqr_core::qqr::{KernelSpec, QqrSpec, QuantileGrid};
use qqr_core::{Month, MonthRange};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub id: String,
    pub path: PathBuf,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    pub value_column: String,
}

fn default_date_column() -> String {
    "date".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub start: String,
    pub end: String,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { start: "1999-01".into(), end: "2015-09".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyConfig {
    #[default]
    Strict,
    Ffill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QqrConfig {
    pub thetas: Vec<f64>,
    pub taus: Vec<f64>,
    pub bandwidth: f64,
    pub include_lag: bool,
}

impl Default for QqrConfig {
    fn default() -> Self {
        Self {
            thetas: QuantileGrid::default_thetas(),
            taus: QuantileGrid::default_taus(),
            bandwidth: KernelSpec::default().bandwidth(),
            include_lag: true,
        }
    }
}

/// Quantile regions inspected by the hedge / safe-haven rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolesConfig {
    pub normal_thetas: Vec<f64>,
    pub mid_taus: Vec<f64>,
    pub high_taus: Vec<f64>,
}

impl Default for RolesConfig {
    fn default() -> Self {
        Self { normal_thetas: vec![0.4, 0.5, 0.6], mid_taus: vec![0.4, 0.5, 0.6], high_taus: vec![0.8, 0.9] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DfmConfig {
    pub r: usize,
    pub p: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DfmConfig {
    fn default() -> Self {
        let d = DfmSpec::default();
        Self { r: d.r, p: d.p, max_iter: d.max_iter, tol: d.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BdsSection {
    pub dims: Vec<usize>,
    pub eps_multipliers: Vec<f64>,
    pub intercept: bool,
}

impl Default for BdsSection {
    fn default() -> Self {
        let d = BdsConfig::default();
        Self { dims: d.dims().to_vec(), eps_multipliers: d.eps_multipliers().to_vec(), intercept: d.intercept }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gold: InputSpec,
    pub uncertainty: Vec<InputSpec>,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub missing_policy: PolicyConfig,
    #[serde(default)]
    pub qqr: QqrConfig,
    #[serde(default)]
    pub roles: RolesConfig,
    #[serde(default)]
    pub dfm: DfmConfig,
    #[serde(default)]
    pub bds: BdsSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A validated configuration with library types and absolute paths.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub raw: RunConfig,
    pub gold: InputSpec,
    pub uncertainty: Vec<InputSpec>,
    pub window: MonthRange,
    pub policy: MissingPolicy,
    pub grid: QuantileGrid,
    pub qqr: QqrSpec,
    pub roles: RolesConfig,
    pub dfm: DfmSpec,
    pub bds: BdsConfig,
    pub output_dir: PathBuf,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_month(field: &str, s: &str) -> Result<Month, CliError> {
    s.parse().map_err(|e| invalid(format!("window.{field}: {e}")))
}

fn within(grid: &[f64], values: &[f64], what: &str) -> Result<(), CliError> {
    for v in values {
        if !grid.iter().any(|g| (g - v).abs() < 1e-9) {
            return Err(invalid(format!("roles.{what}: {v} is not on the quantile grid")));
        }
    }
    if values.is_empty() {
        return Err(invalid(format!("roles.{what} is empty")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Validates every section and resolves relative paths against `base`.
    pub fn resolve(self, base: &Path) -> Result<Resolved, CliError> {
        if self.uncertainty.is_empty() {
            return Err(invalid("no uncertainty series configured"));
        }
        let mut ids: Vec<&str> = vec![self.gold.id.as_str()];
        for s in &self.uncertainty {
            if ids.contains(&s.id.as_str()) {
                return Err(invalid(format!("duplicate series id `{}`", s.id)));
            }
            ids.push(&s.id);
        }
        if ids.iter().any(|id| id.is_empty() || id.contains(',')) {
            return Err(invalid("series ids must be nonempty and contain no commas"));
        }
        let window = MonthRange::new(parse_month("start", &self.window.start)?, parse_month("end", &self.window.end)?)
            .map_err(|e| invalid(format!("window: {e}")))?;
        let policy = match self.missing_policy {
            PolicyConfig::Strict => MissingPolicy::Strict,
            PolicyConfig::Ffill => MissingPolicy::Ffill,
        };
        let grid = QuantileGrid::new(self.qqr.thetas.clone(), self.qqr.taus.clone())
            .map_err(|e| invalid(format!("qqr: {e}")))?;
        let kernel = KernelSpec::new(self.qqr.bandwidth).map_err(|e| invalid(format!("qqr: {e}")))?;
        within(grid.thetas(), &self.roles.normal_thetas, "normal_thetas")?;
        within(grid.taus(), &self.roles.mid_taus, "mid_taus")?;
        within(grid.taus(), &self.roles.high_taus, "high_taus")?;
        let dfm = DfmSpec { r: self.dfm.r, p: self.dfm.p, max_iter: self.dfm.max_iter, tol: self.dfm.tol };
        dfm.validate().map_err(|e| invalid(format!("dfm: {e}")))?;
        let bds = BdsConfig::new(self.bds.dims.clone(), self.bds.eps_multipliers.clone(), self.bds.intercept)
            .map_err(|e| invalid(format!("bds: {e}")))?;

        let absolute = |spec: &InputSpec| InputSpec { path: base.join(&spec.path), ..spec.clone() };
        Ok(Resolved {
            gold: absolute(&self.gold),
            uncertainty: self.uncertainty.iter().map(absolute).collect(),
            window,
            policy,
            grid,
            qqr: QqrSpec { kernel, include_lag: self.qqr.include_lag },
            roles: self.roles.clone(),
            dfm,
            bds,
            output_dir: base.join(&self.output_dir),
            raw: self,
        })
    }
}
