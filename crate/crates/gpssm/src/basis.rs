//! Laplace-operator eigenbasis on rectangular domains with Dirichlet
//! boundary conditions, stationary-kernel spectral densities, and the
//! reduced-rank covariance approximation assembled from them.
//!
//! On the box `[-L_1,L_1] x ... x [-L_d,L_d]` the eigenpairs are
//!
//! ```text
//! lambda_j = sum_k (pi j_k / (2 L_k))^2
//! phi_j(x) = prod_k L_k^{-1/2} sin(pi j_k (x_k + L_k) / (2 L_k))
//! ```
//!
//! and a stationary covariance function is approximated by
//! `sum_j S(sqrt(lambda_j)) phi_j(x) phi_j(x')`, with `S` the kernel's
//! spectral density over angular frequency. The inverse spectral densities
//! form the diagonal prior precision placed on basis weights.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what} must be strictly positive and finite")]
    NonPositive { what: &'static str },
    #[error("domain must have at least one dimension")]
    EmptyDomain,
    #[error("basis multi-indices must have entries >= 1")]
    ZeroIndex,
    #[error("duplicate basis index {0:?}")]
    DuplicateIndex(Vec<usize>),
    #[error("Matern kernel requires one shared lengthscale")]
    AnisotropicMatern,
    #[error("spectral density underflowed to zero at basis index {index:?}")]
    SpectralUnderflow { index: Vec<usize> },
}

/// Rectangular region `[-L_1,L_1] x ... x [-L_d,L_d]` hosting the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    half_widths: Vec<f64>,
}

impl Domain {
    pub fn new(half_widths: Vec<f64>) -> Result<Self, BasisError> {
        if half_widths.is_empty() {
            return Err(BasisError::EmptyDomain);
        }
        if half_widths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(BasisError::NonPositive {
                what: "domain half-width",
            });
        }
        Ok(Self { half_widths })
    }

    /// Cube `[-l, l]^dim`.
    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self, BasisError> {
        Self::new(vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.half_widths.len()
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    /// Whether `x` lies inside the closed box.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.half_widths)
                .all(|(&xi, &l)| xi.abs() <= l)
    }

    /// Eigenvalue of the negative Laplacian for multi-index `j`.
    pub fn eigenvalue(&self, index: &BasisIndex) -> Result<f64, BasisError> {
        self.check_index(index)?;
        Ok(index
            .as_slice()
            .iter()
            .zip(&self.half_widths)
            .map(|(&j, &l)| {
                let w = std::f64::consts::PI * j as f64 / (2.0 * l);
                w * w
            })
            .sum())
    }

    /// Eigenfunction `phi_j(x)`. The sine formula is evaluated as-is for
    /// `x` outside the box; it extends smoothly.
    pub fn eigenfunction(&self, index: &BasisIndex, x: &DVector<f64>) -> Result<f64, BasisError> {
        self.check_index(index)?;
        if x.len() != self.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(index
            .as_slice()
            .iter()
            .zip(x.iter().zip(&self.half_widths))
            .map(|(&j, (&xi, &l))| {
                (std::f64::consts::PI * j as f64 * (xi + l) / (2.0 * l)).sin() / l.sqrt()
            })
            .product())
    }

    fn check_index(&self, index: &BasisIndex) -> Result<(), BasisError> {
        if index.len() != self.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.dim(),
                found: index.len(),
            });
        }
        Ok(())
    }
}

/// Multi-index `(j_1, .., j_d)`, all entries >= 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisIndex(Vec<usize>);

impl BasisIndex {
    pub fn new(indices: Vec<usize>) -> Result<Self, BasisError> {
        if indices.is_empty() {
            return Err(BasisError::EmptyDomain);
        }
        if indices.iter().any(|&j| j == 0) {
            return Err(BasisError::ZeroIndex);
        }
        Ok(Self(indices))
    }

    pub fn univariate(j: usize) -> Result<Self, BasisError> {
        Self::new(vec![j])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Stationary covariance family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    SquaredExponential,
    /// Matern with smoothness `nu`; isotropic in the lengthscale.
    Matern { nu: f64 },
}

/// Covariance family plus hyperparameters (variance, lengthscales).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    variance: f64,
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        variance: f64,
        lengthscales: Vec<f64>,
    ) -> Result<Self, BasisError> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(BasisError::NonPositive { what: "variance" });
        }
        if lengthscales.is_empty() {
            return Err(BasisError::EmptyDomain);
        }
        if lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(BasisError::NonPositive { what: "lengthscale" });
        }
        if let KernelFamily::Matern { nu } = family {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(BasisError::NonPositive { what: "matern nu" });
            }
            if lengthscales.windows(2).any(|w| w[0] != w[1]) {
                return Err(BasisError::AnisotropicMatern);
            }
        }
        Ok(Self {
            family,
            variance,
            lengthscales,
        })
    }

    pub fn squared_exponential(variance: f64, lengthscales: Vec<f64>) -> Result<Self, BasisError> {
        Self::new(KernelFamily::SquaredExponential, variance, lengthscales)
    }

    pub fn matern(nu: f64, variance: f64, lengthscales: Vec<f64>) -> Result<Self, BasisError> {
        Self::new(KernelFamily::Matern { nu }, variance, lengthscales)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Spectral density over angular frequency `omega`.
    ///
    /// Squared exponential uses the ARD product form
    /// `sigma^2 (2 pi)^{d/2} (prod_k l_k) exp(-1/2 sum_k l_k^2 w_k^2)`;
    /// Matern the isotropic d-dimensional form
    /// `sigma^2 2^d pi^{d/2} G(nu+d/2) (2 nu)^nu / (G(nu) l^{2 nu})
    ///  (2 nu / l^2 + |w|^2)^{-(nu+d/2)}`.
    pub fn spectral_density(&self, omega: &[f64]) -> Result<f64, BasisError> {
        let d = self.input_dim();
        if omega.len() != d {
            return Err(BasisError::DimensionMismatch {
                expected: d,
                found: omega.len(),
            });
        }
        Ok(self.spectral_density_at(omega))
    }

    /// Unchecked evaluation at a frequency vector.
    fn spectral_density_at(&self, omega: &[f64]) -> f64 {
        let d = self.input_dim() as f64;
        match self.family {
            KernelFamily::SquaredExponential => {
                let prod_l: f64 = self.lengthscales.iter().product();
                let sum_l2: f64 = self
                    .lengthscales
                    .iter()
                    .zip(omega)
                    .map(|(&l, &w)| l * l * w * w)
                    .sum();
                self.variance
                    * (2.0 * std::f64::consts::PI).powf(d / 2.0)
                    * prod_l
                    * (-0.5 * sum_l2).exp()
            }
            KernelFamily::Matern { nu } => {
                let l = self.lengthscales[0];
                let omega_sq: f64 = omega.iter().map(|w| w * w).sum();
                let ln_pref = self.variance.ln()
                    + d * std::f64::consts::LN_2
                    + (d / 2.0) * std::f64::consts::PI.ln()
                    + statrs::function::gamma::ln_gamma(nu + d / 2.0)
                    + nu * (2.0 * nu).ln()
                    - statrs::function::gamma::ln_gamma(nu)
                    - 2.0 * nu * l.ln();
                let ln_tail = -(nu + d / 2.0) * (2.0 * nu / (l * l) + omega_sq).ln();
                (ln_pref + ln_tail).exp()
            }
        }
    }

    /// Hyperparameters as a flat log vector: `[ln var, ln l_1, .., ln l_d]`
    /// for the ARD squared exponential, `[ln var, ln l]` for the isotropic
    /// Matern (one shared lengthscale regardless of dimension).
    pub fn log_params(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::SquaredExponential => {
                let mut p = Vec::with_capacity(1 + self.lengthscales.len());
                p.push(self.variance.ln());
                p.extend(self.lengthscales.iter().map(|l| l.ln()));
                p
            }
            KernelFamily::Matern { .. } => {
                vec![self.variance.ln(), self.lengthscales[0].ln()]
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self.family {
            KernelFamily::SquaredExponential => 1 + self.lengthscales.len(),
            KernelFamily::Matern { .. } => 2,
        }
    }

    /// Same family with hyperparameters replaced from a log-vector.
    pub fn with_log_params(&self, log_params: &[f64]) -> Result<Self, BasisError> {
        if log_params.len() != self.n_params() {
            return Err(BasisError::DimensionMismatch {
                expected: self.n_params(),
                found: log_params.len(),
            });
        }
        let lengthscales = match self.family {
            KernelFamily::SquaredExponential => {
                log_params[1..].iter().map(|p| p.exp()).collect()
            }
            KernelFamily::Matern { .. } => vec![log_params[1].exp(); self.lengthscales.len()],
        };
        Self::new(self.family, log_params[0].exp(), lengthscales)
    }
}

/// A finite eigenbasis: domain, ordered multi-indices, and the kernel whose
/// spectral density weighs the basis.
///
/// Indices are kept in canonical order (ascending eigenvalue, lexicographic
/// tie-break) so that weight layouts are reproducible across runs and files.
#[derive(Debug, Clone)]
pub struct BasisConfig {
    domain: Domain,
    indices: Vec<BasisIndex>,
    kernel: KernelSpec,
    eigenvalues: Vec<f64>,
    /// Per-index frequency vectors `(pi j_k / (2 L_k))_k`; their squared
    /// norm is the eigenvalue, so for isotropic kernels evaluating the
    /// spectral density here equals evaluating it at `sqrt(lambda_j)`.
    frequencies: Vec<Vec<f64>>,
    norm: f64,
}

impl BasisConfig {
    /// Builds a basis from explicit indices. Duplicates are rejected; an
    /// empty index list is permitted (all sums over the basis are empty).
    pub fn new(
        domain: Domain,
        indices: Vec<BasisIndex>,
        kernel: KernelSpec,
    ) -> Result<Self, BasisError> {
        if kernel.input_dim() != domain.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: domain.dim(),
                found: kernel.input_dim(),
            });
        }
        let mut keyed: Vec<(f64, BasisIndex)> = indices
            .into_iter()
            .map(|j| domain.eigenvalue(&j).map(|l| (l, j)))
            .collect::<Result<_, _>>()?;
        keyed.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("eigenvalues are finite")
                .then_with(|| a.1.cmp(&b.1))
        });
        for w in keyed.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(BasisError::DuplicateIndex(w[0].1.as_slice().to_vec()));
            }
        }
        let eigenvalues: Vec<f64> = keyed.iter().map(|(l, _)| *l).collect();
        let frequencies = keyed
            .iter()
            .map(|(_, j)| {
                j.as_slice()
                    .iter()
                    .zip(domain.half_widths())
                    .map(|(&jk, &lk)| std::f64::consts::PI * jk as f64 / (2.0 * lk))
                    .collect()
            })
            .collect();
        let norm = domain
            .half_widths()
            .iter()
            .map(|l| 1.0 / l.sqrt())
            .product();
        Ok(Self {
            domain,
            indices: keyed.into_iter().map(|(_, j)| j).collect(),
            kernel,
            eigenvalues,
            frequencies,
            norm,
        })
    }

    /// Full tensor grid `j_k in {1..per_dim}` over the domain's dimensions.
    pub fn tensor_grid(
        domain: Domain,
        per_dim: usize,
        kernel: KernelSpec,
    ) -> Result<Self, BasisError> {
        if per_dim == 0 {
            return Err(BasisError::ZeroIndex);
        }
        let d = domain.dim();
        let mut indices = Vec::with_capacity(per_dim.pow(d as u32));
        let mut current = vec![1usize; d];
        loop {
            indices.push(BasisIndex::new(current.clone())?);
            let mut k = 0;
            loop {
                current[k] += 1;
                if current[k] <= per_dim {
                    break;
                }
                current[k] = 1;
                k += 1;
                if k == d {
                    return Self::new(domain, indices, kernel);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }

    /// Eigenvalues in canonical order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Swaps the kernel hyperparameters, keeping geometry and ordering.
    pub fn set_kernel(&mut self, kernel: KernelSpec) -> Result<(), BasisError> {
        if kernel.input_dim() != self.domain.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.domain.dim(),
                found: kernel.input_dim(),
            });
        }
        self.kernel = kernel;
        Ok(())
    }

    /// Stacked eigenfunction values `Phi(x)` in canonical order.
    pub fn basis_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>, BasisError> {
        if x.len() != self.domain.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.domain.dim(),
                found: x.len(),
            });
        }
        let mut out = DVector::zeros(self.len());
        self.basis_vector_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Hot-path variant writing into `out`; dimensions must be pre-checked.
    ///
    /// Per dimension, `sin(j a)` for all needed `j` is produced with the
    /// Chebyshev-style recurrence `sin((j+1)a) = 2 cos(a) sin(ja) - sin((j-1)a)`.
    pub(crate) fn basis_vector_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.domain.dim());
        debug_assert_eq!(out.len(), self.len());
        let d = self.domain.dim();
        let half_widths = self.domain.half_widths();

        let mut tables: Vec<Vec<f64>> = Vec::with_capacity(d);
        for k in 0..d {
            let max_j = self
                .indices
                .iter()
                .map(|j| j.as_slice()[k])
                .max()
                .unwrap_or(0);
            let a = std::f64::consts::PI * (x[k] + half_widths[k]) / (2.0 * half_widths[k]);
            let mut table = Vec::with_capacity(max_j);
            if max_j >= 1 {
                table.push(a.sin());
            }
            if max_j >= 2 {
                table.push((2.0 * a).sin());
            }
            let two_cos = 2.0 * a.cos();
            for j in 2..max_j {
                let next = two_cos * table[j - 1] - table[j - 2];
                table.push(next);
            }
            tables.push(table);
        }
        for (slot, index) in out.iter_mut().zip(&self.indices) {
            let mut v = self.norm;
            for (k, &j) in index.as_slice().iter().enumerate() {
                v *= tables[k][j - 1];
            }
            *slot = v;
        }
    }

    /// Reduced-rank approximation `sum_j S(sqrt(lambda_j)) phi_j(x) phi_j(x')`.
    pub fn approx_covariance(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<f64, BasisError> {
        let phi_x = self.basis_vector(x)?;
        let phi_y = self.basis_vector(y)?;
        let mut acc = 0.0;
        for j in 0..self.len() {
            acc += self.kernel.spectral_density_at(&self.frequencies[j]) * phi_x[j] * phi_y[j];
        }
        Ok(acc)
    }

    /// Diagonal of the prior precision: `1 / S(sqrt(lambda_j))` per index.
    pub fn prior_precision_diag(&self) -> Result<DVector<f64>, BasisError> {
        self.prior_precision_diag_for(&self.kernel)
    }

    /// Prior precision under an alternative kernel, reusing the cached
    /// eigenvalues (hyperparameter proposals hit this path).
    pub fn prior_precision_diag_for(&self, kernel: &KernelSpec) -> Result<DVector<f64>, BasisError> {
        if kernel.input_dim() != self.domain.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.domain.dim(),
                found: kernel.input_dim(),
            });
        }
        let mut v = DVector::zeros(self.len());
        for j in 0..self.len() {
            let s = kernel.spectral_density_at(&self.frequencies[j]);
            if !(s > 0.0) || !s.is_finite() {
                return Err(BasisError::SpectralUnderflow {
                    index: self.indices[j].as_slice().to_vec(),
                });
            }
            let p = 1.0 / s;
            if !p.is_finite() {
                return Err(BasisError::SpectralUnderflow {
                    index: self.indices[j].as_slice().to_vec(),
                });
            }
            v[j] = p;
        }
        Ok(v)
    }

    /// Prior precision as the full (diagonal) matrix.
    pub fn prior_precision(&self) -> Result<nalgebra::DMatrix<f64>, BasisError> {
        Ok(nalgebra::DMatrix::from_diagonal(
            &self.prior_precision_diag()?,
        ))
    }
}
