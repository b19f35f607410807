//! The reduced-rank state space model: feature maps, measurement models,
//! priors, simulation, and the densities every other module leans on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::basis::{BasisConfig, BasisError, KernelSpec};
use crate::dists::{cholesky_jittered, mvn_logpdf_chol, sample_mvn_chol, DistError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("model requires input signals but none were provided")]
    MissingInputs,
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Gaussian with full covariance; used for the initial state.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Feature map `z(x, u)` whose linear combination forms the transition mean.
///
/// `Basis` is the reduced-rank eigenbasis (optionally with a second basis
/// over an exogenous input, concatenated feature-wise so one widened weight
/// matrix covers both). `Linear` short-circuits the basis entirely with
/// `z = [x; u]`, which makes the model an ordinary (Bayesian) linear state
/// space model; the prior precision for its weights must then be supplied
/// by the caller wherever one is needed.
#[derive(Debug, Clone)]
pub enum Features {
    Basis {
        state: BasisConfig,
        input: Option<BasisConfig>,
    },
    Linear {
        state_dim: usize,
        input_dim: usize,
    },
}

impl Features {
    pub fn state_dim(&self) -> usize {
        match self {
            Features::Basis { state, .. } => state.domain().dim(),
            Features::Linear { state_dim, .. } => *state_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Features::Basis { input, .. } => input.as_ref().map_or(0, |b| b.domain().dim()),
            Features::Linear { input_dim, .. } => *input_dim,
        }
    }

    /// Number of state-only features (the leading block of `dim`).
    pub fn state_feature_dim(&self) -> usize {
        match self {
            Features::Basis { state, .. } => state.len(),
            Features::Linear { state_dim, .. } => *state_dim,
        }
    }

    /// Total feature dimension (state block then input block).
    pub fn dim(&self) -> usize {
        match self {
            Features::Basis { state, input } => {
                state.len() + input.as_ref().map_or(0, |b| b.len())
            }
            Features::Linear {
                state_dim,
                input_dim,
            } => state_dim + input_dim,
        }
    }

    pub fn has_input(&self) -> bool {
        self.input_dim() > 0
    }

    /// Writes `z(x, u)` into `out`; returns true when the point fell
    /// outside the basis domain (diagnostic counter; the sines are still
    /// evaluated as-is).
    pub(crate) fn eval_into(
        &self,
        x: &DVector<f64>,
        u: Option<&DVector<f64>>,
        out: &mut DVector<f64>,
    ) -> bool {
        match self {
            Features::Basis { state, input } => {
                let m = state.len();
                state.basis_vector_into(x.as_slice(), &mut out.as_mut_slice()[..m]);
                let mut outside = !state.domain().contains(x);
                if let Some(ib) = input {
                    let u = u.expect("input basis requires an input signal");
                    ib.basis_vector_into(u.as_slice(), &mut out.as_mut_slice()[m..]);
                    outside |= !ib.domain().contains(u);
                }
                outside
            }
            Features::Linear {
                state_dim,
                input_dim,
            } => {
                out.as_mut_slice()[..*state_dim].copy_from_slice(x.as_slice());
                if *input_dim > 0 {
                    let u = u.expect("input block requires an input signal");
                    out.as_mut_slice()[*state_dim..].copy_from_slice(u.as_slice());
                }
                false
            }
        }
    }

    /// Feature vector `z(x, u)` with dimension checks.
    pub fn eval(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<DVector<f64>, ModelError> {
        self.check_args(x, u)?;
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, u, &mut out);
        Ok(out)
    }

    fn check_args(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<(), ModelError> {
        if x.len() != self.state_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        if self.input_dim() > 0 {
            let u = u.ok_or(ModelError::MissingInputs)?;
            if u.len() != self.input_dim() {
                return Err(ModelError::DimensionMismatch {
                    what: "input",
                    expected: self.input_dim(),
                    found: u.len(),
                });
            }
        }
        Ok(())
    }

    /// Kernel hyperparameters as one flat log-vector (state kernel first,
    /// then the input kernel's). Empty for `Linear`.
    pub fn log_params(&self) -> Vec<f64> {
        match self {
            Features::Basis { state, input } => {
                let mut p = state.kernel().log_params();
                if let Some(ib) = input {
                    p.extend(ib.kernel().log_params());
                }
                p
            }
            Features::Linear { .. } => Vec::new(),
        }
    }

    pub fn n_log_params(&self) -> usize {
        match self {
            Features::Basis { state, input } => {
                state.kernel().n_params() + input.as_ref().map_or(0, |b| b.kernel().n_params())
            }
            Features::Linear { .. } => 0,
        }
    }

    /// Replaces the kernels from a flat log-parameter vector.
    pub fn set_log_params(&mut self, log_params: &[f64]) -> Result<(), ModelError> {
        match self {
            Features::Basis { state, input } => {
                let n_state = state.kernel().n_params();
                let expected = n_state + input.as_ref().map_or(0, |b| b.kernel().n_params());
                if log_params.len() != expected {
                    return Err(ModelError::DimensionMismatch {
                        what: "kernel log-parameters",
                        expected,
                        found: log_params.len(),
                    });
                }
                let state_kernel = state.kernel().with_log_params(&log_params[..n_state])?;
                state.set_kernel(state_kernel)?;
                if let Some(ib) = input {
                    let input_kernel = ib.kernel().with_log_params(&log_params[n_state..])?;
                    ib.set_kernel(input_kernel)?;
                }
                Ok(())
            }
            Features::Linear { .. } => {
                if log_params.is_empty() {
                    Ok(())
                } else {
                    Err(ModelError::DimensionMismatch {
                        what: "kernel log-parameters",
                        expected: 0,
                        found: log_params.len(),
                    })
                }
            }
        }
    }

    /// Kernel hyperparameters in natural scale, for chain records.
    pub fn natural_params(&self) -> Vec<f64> {
        self.log_params().iter().map(|p| p.exp()).collect()
    }

    /// Diagonal prior precision over the full feature block under the
    /// currently held kernels. `None` for `Linear` features, whose prior
    /// precision is not derived from a spectral density.
    pub fn prior_precision_diag(&self) -> Result<Option<DVector<f64>>, BasisError> {
        match self {
            Features::Basis { .. } => {
                let log_params = self.log_params();
                self.prior_precision_diag_for(&log_params).map(Some)
            }
            Features::Linear { .. } => Ok(None),
        }
    }

    /// Prior precision under alternative kernel hyperparameters, without
    /// mutating the held kernels (hyperparameter proposals hit this path).
    pub fn prior_precision_diag_for(&self, log_params: &[f64]) -> Result<DVector<f64>, BasisError> {
        match self {
            Features::Basis { state, input } => {
                let n_state = state.kernel().n_params();
                let state_kernel = state.kernel().with_log_params(&log_params[..n_state])?;
                let mut v = state.prior_precision_diag_for(&state_kernel)?;
                if let Some(ib) = input {
                    let input_kernel = ib.kernel().with_log_params(&log_params[n_state..])?;
                    let vi = ib.prior_precision_diag_for(&input_kernel)?;
                    v = DVector::from_iterator(
                        v.len() + vi.len(),
                        v.iter().cloned().chain(vi.iter().cloned()),
                    );
                }
                Ok(v)
            }
            Features::Linear { .. } => unreachable!("Linear features carry no kernel"),
        }
    }

    pub fn state_kernel(&self) -> Option<&KernelSpec> {
        match self {
            Features::Basis { state, .. } => Some(state.kernel()),
            Features::Linear { .. } => None,
        }
    }
}

/// Measurement model `g`.
#[derive(Debug, Clone)]
pub enum Measurement {
    /// `g(x) = C x` with known (or currently sampled) `C` and noise `R`.
    LinearState { map: DMatrix<f64>, noise: DMatrix<f64> },
    /// `g(x) = C z_state(x)` over the state feature block.
    BasisWeights { map: DMatrix<f64>, noise: DMatrix<f64> },
}

impl Measurement {
    pub fn obs_dim(&self) -> usize {
        match self {
            Measurement::LinearState { map, .. } | Measurement::BasisWeights { map, .. } => {
                map.nrows()
            }
        }
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        match self {
            Measurement::LinearState { noise, .. } | Measurement::BasisWeights { noise, .. } => {
                noise
            }
        }
    }

    pub fn map(&self) -> &DMatrix<f64> {
        match self {
            Measurement::LinearState { map, .. } | Measurement::BasisWeights { map, .. } => map,
        }
    }

    /// Identity observation of every state dimension with isotropic noise.
    pub fn identity(dim: usize, noise_var: f64) -> Self {
        Measurement::LinearState {
            map: DMatrix::identity(dim, dim),
            noise: DMatrix::identity(dim, dim) * noise_var,
        }
    }
}

/// Hyperprior for the conjugate block and the kernel hyperparameters.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    /// Inverse-Wishart degrees of freedom for the process noise.
    pub q_dof: f64,
    /// Inverse-Wishart scale matrix for the process noise.
    pub q_scale: DMatrix<f64>,
    /// Prior over log kernel hyperparameters.
    pub theta_prior: ThetaPrior,
}

impl PriorSpec {
    /// Weakly informative default: `Q ~ IW(n_x + 9, I)` and independent
    /// `N(0, 2^2)` priors on each log hyperparameter.
    pub fn default_for(state_dim: usize, n_theta: usize) -> Self {
        Self {
            q_dof: state_dim as f64 + 9.0,
            q_scale: DMatrix::identity(state_dim, state_dim),
            theta_prior: ThetaPrior::standard(n_theta),
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), ModelError> {
        if self.q_scale.nrows() != state_dim || self.q_scale.ncols() != state_dim {
            return Err(ModelError::DimensionMismatch {
                what: "process noise prior scale",
                expected: state_dim,
                found: self.q_scale.nrows(),
            });
        }
        if self.q_dof <= state_dim as f64 - 1.0 {
            return Err(ModelError::Dist(DistError::InvalidDof {
                dof: self.q_dof,
                dim: state_dim,
            }));
        }
        Ok(())
    }
}

/// Independent normal priors over log hyperparameters.
#[derive(Debug, Clone)]
pub struct ThetaPrior {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ThetaPrior {
    /// `N(0, 2^2)` per parameter.
    pub fn standard(n: usize) -> Self {
        Self {
            means: vec![0.0; n],
            stds: vec![2.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn logpdf(&self, log_theta: &[f64]) -> f64 {
        log_theta
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&x, (&m, &s))| {
                let z = (x - m) / s;
                -0.5 * (z * z) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        self.means
            .iter()
            .zip(&self.stds)
            .map(|(&m, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }
}

/// A fully specified model instance: weights, noises, feature map,
/// measurement, and initial-state distribution.
#[derive(Debug, Clone)]
pub struct GpSsm {
    /// Transition weights, `state_dim x features.dim()`.
    pub weights: DMatrix<f64>,
    /// Process noise covariance.
    pub process_noise: DMatrix<f64>,
    pub features: Features,
    pub measurement: Measurement,
    pub init: Gaussian,
}

impl GpSsm {
    pub fn new(
        weights: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        features: Features,
        measurement: Measurement,
        init: Gaussian,
    ) -> Result<Self, ModelError> {
        let n_x = features.state_dim();
        if weights.nrows() != n_x || weights.ncols() != features.dim() {
            return Err(ModelError::DimensionMismatch {
                what: "transition weights",
                expected: n_x * features.dim(),
                found: weights.nrows() * weights.ncols(),
            });
        }
        if process_noise.nrows() != n_x || process_noise.ncols() != n_x {
            return Err(ModelError::DimensionMismatch {
                what: "process noise",
                expected: n_x,
                found: process_noise.nrows(),
            });
        }
        if init.dim() != n_x {
            return Err(ModelError::DimensionMismatch {
                what: "initial state",
                expected: n_x,
                found: init.dim(),
            });
        }
        match &measurement {
            Measurement::LinearState { map, noise } => {
                if map.ncols() != n_x {
                    return Err(ModelError::DimensionMismatch {
                        what: "measurement map",
                        expected: n_x,
                        found: map.ncols(),
                    });
                }
                if noise.nrows() != map.nrows() || noise.ncols() != map.nrows() {
                    return Err(ModelError::DimensionMismatch {
                        what: "measurement noise",
                        expected: map.nrows(),
                        found: noise.nrows(),
                    });
                }
            }
            Measurement::BasisWeights { map, noise } => {
                if map.ncols() != features.state_feature_dim() {
                    return Err(ModelError::DimensionMismatch {
                        what: "measurement map",
                        expected: features.state_feature_dim(),
                        found: map.ncols(),
                    });
                }
                if noise.nrows() != map.nrows() || noise.ncols() != map.nrows() {
                    return Err(ModelError::DimensionMismatch {
                        what: "measurement noise",
                        expected: map.nrows(),
                        found: noise.nrows(),
                    });
                }
            }
        }
        // SPD checks up front so later hot paths can assume them.
        cholesky_jittered(&process_noise, "process noise")?;
        cholesky_jittered(measurement.noise(), "measurement noise")?;
        cholesky_jittered(&init.cov, "initial state covariance")?;
        Ok(Self {
            weights,
            process_noise,
            features,
            measurement,
            init,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.features.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.measurement.obs_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    /// Transition mean `A z(x, u)`.
    pub fn transition_mean(
        &self,
        x: &DVector<f64>,
        u: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>, ModelError> {
        Ok(&self.weights * self.features.eval(x, u)?)
    }

    /// Measurement mean `g(x)`.
    pub fn observation_mean(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        match &self.measurement {
            Measurement::LinearState { map, .. } => {
                if x.len() != map.ncols() {
                    return Err(ModelError::DimensionMismatch {
                        what: "state",
                        expected: map.ncols(),
                        found: x.len(),
                    });
                }
                Ok(map * x)
            }
            Measurement::BasisWeights { map, .. } => {
                let z = match &self.features {
                    Features::Basis { state, .. } => state.basis_vector(x)?,
                    Features::Linear { .. } => x.clone(),
                };
                Ok(map * z)
            }
        }
    }

    /// Log-density `log N(y | g(x), R)`.
    pub fn obs_loglik(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64, ModelError> {
        if y.len() != self.obs_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "observation",
                expected: self.obs_dim(),
                found: y.len(),
            });
        }
        let mean = self.observation_mean(x)?;
        let chol = cholesky_jittered(self.measurement.noise(), "measurement noise")?;
        Ok(mvn_logpdf_chol(y, &mean, &chol))
    }

    /// Simulates `t_len` steps; draws the initial state, then alternates a
    /// process-noise draw and a measurement-noise draw per step, so the
    /// realization is a deterministic function of the generator state.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        t_len: usize,
        inputs: Option<&[DVector<f64>]>,
        rng: &mut R,
    ) -> Result<Trajectory, ModelError> {
        if self.features.input_dim() > 0 {
            let u = inputs.ok_or(ModelError::MissingInputs)?;
            if u.len() < t_len {
                return Err(ModelError::DimensionMismatch {
                    what: "input sequence length",
                    expected: t_len,
                    found: u.len(),
                });
            }
        }
        let chol_q = cholesky_jittered(&self.process_noise, "process noise")?;
        let chol_r = cholesky_jittered(self.measurement.noise(), "measurement noise")?;
        let chol_init = cholesky_jittered(&self.init.cov, "initial state covariance")?;

        let mut states = Vec::with_capacity(t_len);
        let mut observations = Vec::with_capacity(t_len);
        let mut x = sample_mvn_chol(rng, &self.init.mean, &chol_init);
        for t in 0..t_len {
            let u_t = inputs.map(|u| &u[t]);
            let y_mean = self.observation_mean(&x)?;
            observations.push(sample_mvn_chol(rng, &y_mean, &chol_r));
            states.push(x.clone());
            if t + 1 < t_len {
                let f = self.transition_mean(&x, u_t)?;
                x = sample_mvn_chol(rng, &f, &chol_q);
            }
        }
        Ok(Trajectory {
            states,
            inputs: inputs.map(|u| u[..t_len].to_vec()),
            observations,
        })
    }
}

/// A realized state/observation sequence (plus inputs when present).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Option<Vec<DVector<f64>>>,
    pub observations: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
