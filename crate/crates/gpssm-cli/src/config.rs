//! Run configuration: the JSON file format, flag overrides, resolution of
//! every "auto" into concrete values, and the run manifest that echoes the
//! resolved configuration for bit-exact reruns.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use gpssm::gibbs::{GibbsSettings, ModelStructure};
use gpssm::model::{Features, Gaussian, Measurement, PriorSpec, ThetaPrior};
use gpssm::{BasisConfig, BasisError, Domain, KernelSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown kernel family {0:?} (expected \"squared_exponential\" or \"matern\")")]
    UnknownKernel(String),
    #[error("{what} must be at least 1")]
    ZeroCount { what: &'static str },
    #[error("domain_half_widths has {found} entries for state dimension {expected}")]
    DomainDimension { expected: usize, found: usize },
    #[error("observation map has {found} columns for state dimension {expected}")]
    ObsMapShape { expected: usize, found: usize },
    #[error("matrix rows have unequal lengths")]
    RaggedMatrix,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

fn default_features_per_dim() -> usize {
    20
}
fn default_one() -> usize {
    1
}
fn default_iterations() -> usize {
    200
}
fn default_particles() -> usize {
    20
}
fn default_mh_scale() -> f64 {
    0.1
}
fn default_burn_in_fraction() -> f64 {
    0.25
}
fn default_q_dof_offset() -> f64 {
    9.0
}
fn default_theta_log_std() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}
fn default_protocol() -> String {
    "one_step".to_string()
}

/// Model section of the user configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_one")]
    pub state_dim: usize,
    /// Eigenfunctions per state dimension (tensor grid).
    #[serde(default = "default_features_per_dim")]
    pub features_per_dim: usize,
    /// Box half-widths; `None` sizes the domain from a pilot filter pass.
    #[serde(default)]
    pub domain_half_widths: Option<Vec<f64>>,
    /// "squared_exponential" or "matern".
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub matern_nu: Option<f64>,
    /// Eigenfunctions per input dimension; 0 disables the input basis.
    #[serde(default)]
    pub input_features_per_dim: usize,
    #[serde(default)]
    pub input_domain_half_widths: Option<Vec<f64>>,
    /// Observation map `C` (rows); `None` means identity.
    #[serde(default)]
    pub obs_map: Option<Vec<Vec<f64>>>,
    /// Observation noise `R` (rows), or a scalar for isotropic noise.
    #[serde(default)]
    pub obs_noise: Option<serde_json::Value>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 1,
            features_per_dim: default_features_per_dim(),
            domain_half_widths: None,
            kernel: None,
            matern_nu: None,
            input_features_per_dim: 0,
            input_domain_half_widths: None,
            obs_map: None,
            obs_noise: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Degrees of freedom for the process-noise prior; defaults to
    /// `state_dim + 9`.
    #[serde(default)]
    pub q_dof: Option<f64>,
    /// Scalar multiple of the identity for the process-noise prior scale.
    #[serde(default)]
    pub q_scale: Option<f64>,
    /// Prior mean of the log kernel variance; when absent it is centered
    /// on the log variance of the (back-projected) observations, which
    /// matches the usual practice of standardizing data before placing a
    /// unit-scale prior.
    #[serde(default)]
    pub theta_variance_log_mean: Option<f64>,
    /// Prior mean of each log lengthscale.
    #[serde(default)]
    pub theta_lengthscale_log_mean: f64,
    #[serde(default = "default_theta_log_std")]
    pub theta_log_std: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            q_dof: None,
            q_scale: None,
            theta_variance_log_mean: None,
            theta_lengthscale_log_mean: 0.0,
            theta_log_std: default_theta_log_std(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_one")]
    pub mh_steps: usize,
    #[serde(default = "default_mh_scale")]
    pub mh_proposal_scale: f64,
    #[serde(default)]
    pub adapt_proposal: bool,
    #[serde(default = "default_burn_in_fraction")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            particles: default_particles(),
            mh_steps: 1,
            mh_proposal_scale: default_mh_scale(),
            adapt_proposal: false,
            burn_in_fraction: default_burn_in_fraction(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationConfig {
    #[serde(default = "default_one")]
    pub samples_per_record: usize,
    #[serde(default = "default_protocol")]
    pub protocol: String,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            samples_per_record: 1,
            protocol: default_protocol(),
        }
    }
}

/// Whole-run configuration as persisted to and read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub chains: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            priors: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            evaluation: EvaluationConfig::default(),
            seed: 0,
            chains: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Resolves every optional field against the data dimensions, a
    /// concrete domain (auto-sizing happens before this call), and the
    /// observed state-variance scale used to center the kernel-variance
    /// prior.
    pub fn resolve(
        &self,
        domain_half_widths: Vec<f64>,
        input_domain_half_widths: Option<Vec<f64>>,
        obs_dim: usize,
        input_dim: usize,
        state_variance_scale: f64,
    ) -> Result<ResolvedConfig, ConfigError> {
        let n_x = self.model.state_dim;
        if n_x == 0 {
            return Err(ConfigError::ZeroCount { what: "state_dim" });
        }
        if self.model.features_per_dim == 0 {
            return Err(ConfigError::ZeroCount {
                what: "features_per_dim",
            });
        }
        if self.sampler.iterations == 0 {
            return Err(ConfigError::ZeroCount { what: "iterations" });
        }
        if self.chains == 0 {
            return Err(ConfigError::ZeroCount { what: "chains" });
        }
        if domain_half_widths.len() != n_x {
            return Err(ConfigError::DomainDimension {
                expected: n_x,
                found: domain_half_widths.len(),
            });
        }
        let family = self.model.kernel.as_deref().unwrap_or("squared_exponential");
        if !matches!(family, "squared_exponential" | "se" | "matern") {
            return Err(ConfigError::UnknownKernel(family.to_string()));
        }

        let obs_map = match &self.model.obs_map {
            Some(rows) => {
                let map = rows_to_matrix(rows)?;
                if map.ncols() != n_x {
                    return Err(ConfigError::ObsMapShape {
                        expected: n_x,
                        found: map.ncols(),
                    });
                }
                map
            }
            None => DMatrix::identity(obs_dim.max(1), n_x),
        };
        let n_y = obs_map.nrows();
        let obs_noise = match &self.model.obs_noise {
            Some(serde_json::Value::Number(v)) => {
                DMatrix::identity(n_y, n_y) * v.as_f64().unwrap_or(1.0)
            }
            Some(value) => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(value.clone())
                    .map_err(|_| ConfigError::RaggedMatrix)?;
                rows_to_matrix(&rows)?
            }
            None => DMatrix::identity(n_y, n_y),
        };

        let input_basis = if input_dim > 0 && self.model.input_features_per_dim > 0 {
            let widths = input_domain_half_widths.unwrap_or_else(|| vec![1.0; input_dim]);
            Some((self.model.input_features_per_dim, widths))
        } else {
            None
        };

        Ok(ResolvedConfig {
            model: ResolvedModel {
                state_dim: n_x,
                features_per_dim: self.model.features_per_dim,
                domain_half_widths,
                kernel: self
                    .model
                    .kernel
                    .clone()
                    .unwrap_or_else(|| "squared_exponential".to_string()),
                matern_nu: self.model.matern_nu,
                input_features_per_dim: input_basis.as_ref().map_or(0, |(m, _)| *m),
                input_domain_half_widths: input_basis.map(|(_, w)| w),
                obs_map: matrix_to_rows(&obs_map),
                obs_noise: matrix_to_rows(&obs_noise),
            },
            priors: ResolvedPriors {
                q_dof: self
                    .priors
                    .q_dof
                    .unwrap_or(n_x as f64 + default_q_dof_offset()),
                q_scale: self.priors.q_scale.unwrap_or(1.0),
                theta_variance_log_mean: self
                    .priors
                    .theta_variance_log_mean
                    .unwrap_or_else(|| state_variance_scale.max(1e-12).ln()),
                theta_lengthscale_log_mean: self.priors.theta_lengthscale_log_mean,
                theta_log_std: self.priors.theta_log_std,
            },
            sampler: self.sampler.clone(),
            evaluation: self.evaluation.clone(),
            seed: self.seed,
            chains: self.chains,
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) || ncols == 0 {
        return Err(ConfigError::RaggedMatrix);
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Fully concrete model description, as echoed in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedModel {
    pub state_dim: usize,
    pub features_per_dim: usize,
    pub domain_half_widths: Vec<f64>,
    pub kernel: String,
    pub matern_nu: Option<f64>,
    pub input_features_per_dim: usize,
    pub input_domain_half_widths: Option<Vec<f64>>,
    pub obs_map: Vec<Vec<f64>>,
    pub obs_noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedPriors {
    pub q_dof: f64,
    pub q_scale: f64,
    pub theta_variance_log_mean: f64,
    pub theta_lengthscale_log_mean: f64,
    pub theta_log_std: f64,
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub model: ResolvedModel,
    pub priors: ResolvedPriors,
    pub sampler: SamplerConfig,
    pub evaluation: EvaluationConfig,
    pub seed: u64,
    pub chains: usize,
}

impl ResolvedConfig {
    /// Builds the learner-facing model structure.
    pub fn to_structure(&self) -> Result<ModelStructure, ConfigError> {
        let m = &self.model;
        let domain = Domain::new(m.domain_half_widths.clone())?;
        let kernel = match m.kernel.as_str() {
            "squared_exponential" | "se" => {
                KernelSpec::squared_exponential(1.0, vec![1.0; m.state_dim])?
            }
            "matern" => KernelSpec::matern(
                m.matern_nu.unwrap_or(1.5),
                1.0,
                vec![1.0; m.state_dim],
            )?,
            other => return Err(ConfigError::UnknownKernel(other.to_string())),
        };
        let state = BasisConfig::tensor_grid(domain, m.features_per_dim, kernel)?;
        let input = match (&m.input_domain_half_widths, m.input_features_per_dim) {
            (Some(widths), per_dim) if per_dim > 0 => {
                let input_domain = Domain::new(widths.clone())?;
                let input_kernel =
                    KernelSpec::squared_exponential(1.0, vec![1.0; widths.len()])?;
                Some(BasisConfig::tensor_grid(input_domain, per_dim, input_kernel)?)
            }
            _ => None,
        };
        let features = Features::Basis { state, input };
        // Per-kernel layout: the leading parameter of each kernel is the
        // log variance, the rest are log lengthscales.
        let mut means = Vec::with_capacity(features.n_log_params());
        let mut push_kernel = |n_params: usize| {
            means.push(self.priors.theta_variance_log_mean);
            means.extend(std::iter::repeat_n(
                self.priors.theta_lengthscale_log_mean,
                n_params - 1,
            ));
        };
        if let Features::Basis { state, input } = &features {
            push_kernel(state.kernel().n_params());
            if let Some(ib) = input {
                push_kernel(ib.kernel().n_params());
            }
        }
        let n_theta = means.len();
        let measurement = Measurement::LinearState {
            map: rows_to_matrix(&m.obs_map)?,
            noise: rows_to_matrix(&m.obs_noise)?,
        };
        Ok(ModelStructure {
            priors: PriorSpec {
                q_dof: self.priors.q_dof,
                q_scale: DMatrix::identity(m.state_dim, m.state_dim) * self.priors.q_scale,
                theta_prior: ThetaPrior {
                    means,
                    stds: vec![self.priors.theta_log_std; n_theta],
                },
            },
            init: Gaussian::standard(m.state_dim),
            linear_prior_precision: None,
            obs_noise_prior: None,
            features,
            measurement,
        })
    }

    pub fn gibbs_settings(&self) -> GibbsSettings {
        let burn_in =
            ((self.sampler.iterations as f64) * self.sampler.burn_in_fraction).floor() as usize;
        GibbsSettings {
            iterations: self.sampler.iterations,
            particles: self.sampler.particles,
            mh_steps: self.sampler.mh_steps,
            mh_proposal_scale: self.sampler.mh_proposal_scale,
            adapt_proposal: self.sampler.adapt_proposal,
            burn_in,
            learn_observation_model: false,
            parallel: self.sampler.parallel,
            record_states: true,
            init: gpssm::gibbs::ChainInit::EvidenceWarmStart,
        }
    }

    pub fn burn_in(&self) -> usize {
        ((self.sampler.iterations as f64) * self.sampler.burn_in_fraction).floor() as usize
    }
}

/// Manifest written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub mode: String,
    pub config: ResolvedConfig,
    pub seed: u64,
    pub notes: BTreeMap<String, String>,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(mode: &str, config: ResolvedConfig) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            mode: mode.to_string(),
            seed: config.seed,
            config,
            notes: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}
