//! Matrix-normal and inverse-Wishart log-densities and samplers, plus the
//! shared Cholesky-with-jitter fallback.
//!
//! Conventions used throughout the crate:
//! * the matrix normal `MN(M, Q, V)` has row covariance `Q` and left
//!   (column) *precision* `V`, i.e. column covariance `V^{-1}`;
//! * the inverse Wishart `IW(l, Lambda)` has density proportional to
//!   `|Q|^{-(n+l+1)/2} exp(-tr(Q^{-1} Lambda)/2)`, so its mean is
//!   `Lambda / (l - n - 1)` for `l > n + 1`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("{what} is not positive definite (Cholesky failed up to jitter 1e-3)")]
    NotPositiveDefinite { what: &'static str },
    #[error("dimension mismatch in {what}: expected {expected}, got {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("inverse Wishart needs dof > dim - 1, got dof {dof} for dim {dim}")]
    InvalidDof { dof: f64, dim: usize },
}

/// Cholesky with escalating additive jitter.
///
/// Starts at `1e-9 * mean(diag)` and multiplies by 10 up to `1e-3` relative
/// before giving up.
pub(crate) fn cholesky_jittered(
    m: &DMatrix<f64>,
    what: &'static str,
) -> Result<Cholesky<f64, Dyn>, DistError> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = {
        let tr = m.trace() / n as f64;
        if tr.is_finite() && tr > 0.0 {
            tr
        } else {
            1.0
        }
    };
    let mut eps = 1e-9;
    while eps <= 1e-3 {
        let jittered = m + DMatrix::identity(n, n) * (eps * scale);
        if let Some(c) = jittered.cholesky() {
            return Ok(c);
        }
        eps *= 10.0;
    }
    Err(DistError::NotPositiveDefinite { what })
}

fn ln_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Multivariate log-gamma `ln Gamma_p(a)`.
pub fn ln_mv_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=p).map(|i| ln_gamma(a + (1.0 - i as f64) / 2.0)).sum::<f64>()
}

/// Log-density of the matrix normal `MN(A | M, Q, V)` with row covariance
/// `Q` and column precision `V`:
/// `(n/2) ln|V| - (n m / 2) ln 2pi - (m/2) ln|Q| - tr((A-M)' Q^{-1} (A-M) V) / 2`.
pub fn mn_logpdf(
    a: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    row_cov: &DMatrix<f64>,
    col_precision: &DMatrix<f64>,
) -> Result<f64, DistError> {
    let (n, m) = (a.nrows(), a.ncols());
    check_shape("matrix normal mean", mean, n, m)?;
    check_shape("matrix normal row covariance", row_cov, n, n)?;
    check_shape("matrix normal column precision", col_precision, m, m)?;
    let chol_q = cholesky_jittered(row_cov, "matrix normal row covariance")?;
    let chol_v = cholesky_jittered(col_precision, "matrix normal column precision")?;
    let diff = a - mean;
    // tr(D' Q^{-1} D V) = tr((Q^{-1} D) (V D'))
    let qinv_d = chol_q.solve(&diff);
    let quad = (qinv_d.transpose() * &diff * col_precision).trace();
    Ok(0.5 * (n as f64) * ln_det_from_cholesky(&chol_v)
        - 0.5 * (n * m) as f64 * LN_2PI
        - 0.5 * (m as f64) * ln_det_from_cholesky(&chol_q)
        - 0.5 * quad)
}

/// Log-density of the inverse Wishart `IW(Q | dof, scale)`.
pub fn iw_logpdf(q: &DMatrix<f64>, dof: f64, scale: &DMatrix<f64>) -> Result<f64, DistError> {
    let n = q.nrows();
    check_shape("inverse Wishart argument", q, n, n)?;
    check_shape("inverse Wishart scale", scale, n, n)?;
    if dof <= n as f64 - 1.0 {
        return Err(DistError::InvalidDof { dof, dim: n });
    }
    let chol_q = cholesky_jittered(q, "inverse Wishart argument")?;
    let chol_s = cholesky_jittered(scale, "inverse Wishart scale")?;
    let nf = n as f64;
    let trace_term = chol_q.solve(scale).trace();
    Ok(0.5 * dof * ln_det_from_cholesky(&chol_s)
        - 0.5 * (nf + dof + 1.0) * ln_det_from_cholesky(&chol_q)
        - 0.5 * dof * nf * std::f64::consts::LN_2
        - ln_mv_gamma(n, 0.5 * dof)
        - 0.5 * trace_term)
}

fn check_shape(
    what: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), DistError> {
    if m.nrows() != rows {
        return Err(DistError::DimensionMismatch {
            what,
            expected: rows,
            found: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(DistError::DimensionMismatch {
            what,
            expected: cols,
            found: m.ncols(),
        });
    }
    Ok(())
}

/// Draws `A ~ MN(M, Q, V)` (column precision `V`) as
/// `M + chol(Q) X chol(V)^{-T}` with `X` i.i.d. standard normal.
pub fn sample_mn<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DMatrix<f64>,
    row_cov: &DMatrix<f64>,
    col_precision: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DistError> {
    let (n, m) = (mean.nrows(), mean.ncols());
    check_shape("matrix normal row covariance", row_cov, n, n)?;
    check_shape("matrix normal column precision", col_precision, m, m)?;
    let chol_q = cholesky_jittered(row_cov, "matrix normal row covariance")?;
    let chol_v = cholesky_jittered(col_precision, "matrix normal column precision")?;
    let x = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng));
    // Right-multiplying by L_v^{-1} yields column covariance
    // L_v^{-T} L_v^{-1} = V^{-1}: solve L_v' Y' = X' for Y = X L_v^{-1}.
    let y_t = chol_v
        .l()
        .transpose()
        .solve_upper_triangular(&x.transpose())
        .expect("Cholesky factor is invertible");
    Ok(mean + chol_q.l() * y_t.transpose())
}

/// Draws `Q ~ IW(dof, scale)` via the Bartlett decomposition of the
/// Wishart with scale `scale^{-1}`.
pub fn sample_iw<R: Rng + ?Sized>(
    rng: &mut R,
    dof: f64,
    scale: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DistError> {
    let n = scale.nrows();
    check_shape("inverse Wishart scale", scale, n, n)?;
    if dof <= n as f64 - 1.0 {
        return Err(DistError::InvalidDof { dof, dim: n });
    }
    let chol_s = cholesky_jittered(scale, "inverse Wishart scale")?;
    // Lower-triangular Bartlett factor: diag sqrt(chi2(dof - i)), normals below.
    let mut bartlett = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(dof - i as f64).expect("dof checked above");
        bartlett[(i, i)] = chi.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // W = U B B' U' ~ Wishart(dof, scale^{-1}) with U = chol(scale)^{-T};
    // then Q = W^{-1} = (U B)^{-T} (U B)^{-1} is symmetric by construction.
    let u_b = chol_s
        .l()
        .transpose()
        .solve_upper_triangular(&bartlett)
        .expect("Cholesky factor is invertible");
    let inv = u_b
        .try_inverse()
        .ok_or(DistError::NotPositiveDefinite { what: "Wishart draw" })?;
    Ok(inv.transpose() * inv)
}

/// Log-density of `N(x | mean, Sigma)` given a Cholesky factor of `Sigma`.
pub(crate) fn mvn_logpdf_chol(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> f64 {
    let diff = x - mean;
    let solved = chol.solve(&diff);
    -0.5 * (x.len() as f64 * LN_2PI + ln_det_from_cholesky(chol) + diff.dot(&solved))
}

/// Draws from `N(mean, Sigma)` given a Cholesky factor of `Sigma`.
pub(crate) fn sample_mvn_chol<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + chol.l() * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use gpssm_oracle::quadrature::gauss_legendre;
    use gpssm_oracle::stats::{mean_and_var, standard_error_of_mean};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn mn_logpdf_scalar_standard_normal() {
        let z = mat(1, 1, &[0.0]);
        let one = mat(1, 1, &[1.0]);
        let lp = mn_logpdf(&z, &z, &one, &one).unwrap();
        assert_relative_eq!(lp, -0.5 * LN_2PI, max_relative = 1e-14);
    }

    #[test]
    fn mn_logpdf_symmetric_in_mean_argument() {
        let a = mat(2, 2, &[0.3, -0.7, 1.1, 0.2]);
        let m = mat(2, 2, &[0.0, 0.5, -0.4, 0.9]);
        let q = mat(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = mat(2, 2, &[1.5, -0.2, -0.2, 0.8]);
        assert_relative_eq!(
            mn_logpdf(&a, &m, &q, &v).unwrap(),
            mn_logpdf(&m, &a, &q, &v).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn mn_logpdf_factorizes_over_diagonal_covariances() {
        // With diagonal Q and V the density is a product of scalar normals
        // with variances q_i / v_j.
        let a = mat(2, 3, &[0.4, -0.2, 0.9, 1.3, 0.0, -0.5]);
        let q_diag = [2.0, 0.5];
        let v_diag = [1.0, 4.0, 0.25];
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&q_diag));
        let v = DMatrix::from_diagonal(&DVector::from_row_slice(&v_diag));
        let lp = mn_logpdf(&a, &DMatrix::zeros(2, 3), &q, &v).unwrap();
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                let var = q_diag[i] / v_diag[j];
                oracle += -0.5 * (LN_2PI + var.ln() + a[(i, j)] * a[(i, j)] / var);
            }
        }
        assert_relative_eq!(lp, oracle, max_relative = 1e-12);
    }

    #[test]
    fn iw_logpdf_univariate_matches_inverse_gamma() {
        // IW(l, Lambda) in one dimension is inverse-gamma(l/2, Lambda/2).
        let (ell, lambda, q) = (3.0, 1.0, 1.0);
        let lp = iw_logpdf(&mat(1, 1, &[q]), ell, &mat(1, 1, &[lambda])).unwrap();
        let (shape, rate) = (ell / 2.0, lambda / 2.0);
        let oracle = shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * q.ln() - rate / q;
        assert_relative_eq!(lp, oracle, max_relative = 1e-12);
        assert_relative_eq!(lp, -1.4189385332046727, max_relative = 1e-12);
    }

    #[test]
    fn iw_logpdf_univariate_integrates_to_one() {
        // Quadrature over q with the substitution q = u / (1 - u).
        let (ell, lambda) = (5.0, 2.0);
        let scale = mat(1, 1, &[lambda]);
        let (nodes, weights) = gauss_legendre(400);
        let mut total = 0.0;
        for (&u, &w) in nodes.iter().zip(&weights) {
            let t = 0.5 * (u + 1.0);
            let q = t / (1.0 - t);
            let jac = 1.0 / ((1.0 - t) * (1.0 - t));
            total += w * 0.5 * iw_logpdf(&mat(1, 1, &[q]), ell, &scale).unwrap().exp() * jac;
        }
        assert!((total - 1.0).abs() < 1e-4, "integral = {total}");
    }

    #[test]
    fn iw_logpdf_univariate_mode() {
        let (ell, lambda) = (6.0, 3.0);
        let scale = mat(1, 1, &[lambda]);
        let mode = lambda / (ell + 2.0);
        let at_mode = iw_logpdf(&mat(1, 1, &[mode]), ell, &scale).unwrap();
        for q in [mode * 0.9, mode * 1.1] {
            assert!(iw_logpdf(&mat(1, 1, &[q]), ell, &scale).unwrap() < at_mode);
        }
    }

    #[test]
    fn iw_logpdf_rejects_low_dof() {
        let eye = DMatrix::identity(3, 3);
        assert!(matches!(
            iw_logpdf(&eye, 1.5, &eye),
            Err(DistError::InvalidDof { .. })
        ));
    }

    #[test]
    fn sample_iw_univariate_is_scaled_inverse_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ell, lambda) = (10.0, 1.0);
        let scale = mat(1, 1, &[lambda]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_iw(&mut rng, ell, &scale).unwrap()[(0, 0)])
            .collect();
        let (mean, var) = mean_and_var(&draws);
        let se = standard_error_of_mean(var, draws.len());
        let expected = lambda / (ell - 2.0);
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn sample_iw_draws_are_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = mat(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        for _ in 0..200 {
            let q = sample_iw(&mut rng, 5.0, &scale).unwrap();
            assert_relative_eq!(q[(0, 1)], q[(1, 0)], max_relative = 1e-12);
            assert!(q.clone().cholesky().is_some());
        }
    }

    #[test]
    fn sample_mn_moments_match_kronecker_covariance() {
        // vec(A) has covariance V^{-1} (x) Q.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mean = mat(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let q = mat(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let v = mat(2, 2, &[2.0, -0.5, -0.5, 1.0]);
        let v_inv = v.clone().try_inverse().unwrap();
        let n_draws = 100_000;
        let mut sums = [0.0; 4];
        let mut cross = [[0.0; 4]; 4];
        for _ in 0..n_draws {
            let a = sample_mn(&mut rng, &mean, &q, &v).unwrap();
            // vec(A) stacks columns.
            let vals = [a[(0, 0)], a[(1, 0)], a[(0, 1)], a[(1, 1)]];
            let mvals = [mean[(0, 0)], mean[(1, 0)], mean[(0, 1)], mean[(1, 1)]];
            for i in 0..4 {
                sums[i] += vals[i];
                for j in 0..4 {
                    cross[i][j] += (vals[i] - mvals[i]) * (vals[j] - mvals[j]);
                }
            }
        }
        let nf = n_draws as f64;
        for i in 0..4 {
            let (col, row) = (i / 2, i % 2);
            let sd = (v_inv[(col, col)] * q[(row, row)] / nf).sqrt();
            let mvals = [mean[(0, 0)], mean[(1, 0)], mean[(0, 1)], mean[(1, 1)]];
            assert!(
                (sums[i] / nf - mvals[i]).abs() < 3.0 * sd,
                "mean of entry {i}"
            );
        }
        for i in 0..4 {
            for j in 0..4 {
                let truth = v_inv[(i / 2, j / 2)] * q[(i % 2, j % 2)];
                let emp = cross[i][j] / nf;
                // SE of a sample covariance entry.
                let vii = v_inv[(i / 2, i / 2)] * q[(i % 2, i % 2)];
                let vjj = v_inv[(j / 2, j / 2)] * q[(j % 2, j % 2)];
                let se = ((vii * vjj + truth * truth) / nf).sqrt();
                assert!(
                    (emp - truth).abs() < 3.0 * se,
                    "cov({i},{j}) {emp} vs {truth} (se {se})"
                );
            }
        }
    }

    #[test]
    fn sample_mn_collapses_to_mean_for_tiny_row_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = mat(1, 2, &[4.0, -1.0]);
        let q = mat(1, 1, &[1e-16]);
        let v = DMatrix::identity(2, 2);
        let a = sample_mn(&mut rng, &mean, &q, &v).unwrap();
        assert!((a - mean).norm() < 1e-6);
    }

    #[test]
    fn mn_pair_importance_sampling_identity() {
        // E_{A ~ MN}[ exp(logpdf2(A) - logpdf1(A)) ] = 1 for two members of
        // the family; exercises sampler/density consistency.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m1 = mat(1, 2, &[0.0, 0.0]);
        let m2 = mat(1, 2, &[0.3, -0.2]);
        let q = mat(1, 1, &[0.8]);
        let v = mat(2, 2, &[1.4, 0.2, 0.2, 2.0]);
        let n = 200_000;
        let ratios: Vec<f64> = (0..n)
            .map(|_| {
                let a = sample_mn(&mut rng, &m1, &q, &v).unwrap();
                (mn_logpdf(&a, &m2, &q, &v).unwrap() - mn_logpdf(&a, &m1, &q, &v).unwrap()).exp()
            })
            .collect();
        let (mean, var) = mean_and_var(&ratios);
        let se = standard_error_of_mean(var, n);
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn cholesky_jitter_recovers_semidefinite_matrix() {
        let m = mat(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_jittered(&m, "test").is_ok());
        let bad = mat(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jittered(&bad, "test").is_err());
    }
}
