//! JSON configurations of the experiment verbs. Unknown fields are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::entropy::{EntropyConfig, EntropySpec};
use crate::error::{invalid, Result};
use crate::hk::Metric;
use crate::measures::{DiscreteMeasure, DomainSpec, GridDomain};
use crate::mm::bounds::BoundParams;
use crate::mm::MmConfig;
use crate::pde::PdeConfig;

/// A measure given inline or by a path relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Rescale to unit mass after loading.
    #[serde(default)]
    pub normalize: bool,
}

impl MeasureInput {
    pub fn load(&self, base: &Path) -> Result<DiscreteMeasure> {
        let mu = match (&self.domain, &self.density, &self.path) {
            (Some(d), Some(rho), None) => DiscreteMeasure::new(Arc::new(GridDomain::from_spec(d.clone())?), rho.clone())?,
            (None, None, Some(p)) => {
                let text = std::fs::read_to_string(base.join(p))?;
                DiscreteMeasure::from_json(&text)?
            }
            _ => return invalid("a measure needs either domain and density, or path"),
        };
        if self.normalize {
            mu.normalized()
        } else {
            Ok(mu)
        }
    }
}

fn default_metric() -> Metric {
    Metric::Hk
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    Barrier,
    Scaling,
    Exact,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub mu0: MeasureInput,
    pub mu1: MeasureInput,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default)]
    pub solver: SolverChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmRunConfig {
    pub initial: MeasureInput,
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub mm: MmConfig,
    #[serde(default)]
    pub bounds: BoundParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EviCheckConfig {
    /// Run file written by `mm-run`.
    #[serde(default)]
    pub trajectory: Option<String>,
    /// JSON list of `{id, density}` on the trajectory grid.
    #[serde(default)]
    pub observers: Option<String>,
    /// Defaults to the entropy's convexity modulus.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub kappa: f64,
}

fn default_taus() -> Vec<f64> {
    vec![0.02, 0.01, 0.005, 0.0025]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeCompareConfig {
    pub initial: MeasureInput,
    pub entropy: EntropyConfig,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub mm: MmConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSpace {
    Euclid,
    Cone,
    Hk2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeCheck {
    Lac,
    Cs,
    Kappa,
    Appendix,
}

fn default_samples() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryProbeConfig {
    pub space: ProbeSpace,
    pub check: ProbeCheck,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_ps() -> Vec<f64> {
    vec![0.5, 0.6, 0.75, 1.0]
}

fn default_grid() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixCheckConfig {
    #[serde(default = "default_ps")]
    pub p: Vec<f64>,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

impl Default for AppendixCheckConfig {
    fn default() -> Self {
        Self { p: default_ps(), grid: default_grid() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceStudyConfig {
    pub initial: MeasureInput,
    pub entropy: EntropyConfig,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub mm: MmConfig,
}

/// What `mm-run` persists: the entropy alongside the trajectory, so later
/// verbs can evaluate energies without the original config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub entropy: EntropyConfig,
    pub trajectory: serde_json::Value,
}

pub fn entropy_of(cfg: &EntropyConfig) -> Result<EntropySpec> {
    EntropySpec::from_config(cfg)
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    base.join(p)
}
