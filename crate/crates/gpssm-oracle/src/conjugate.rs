//! Exact posterior for scalar Bayesian linear regression with a
//! normal-inverse-gamma prior, the conjugate pair underlying the matrix
//! normal inverse Wishart updates in one dimension.
//!
//! Model: `zeta_t = a z_t + w_t`, `w ~ N(0, q)`, with prior
//! `a | q ~ N(0, q / v)` and `q ~ InvGamma(dof/2, scale/2)`.

#[derive(Debug, Clone, Copy)]
pub struct ScalarConjugatePosterior {
    pub dof: f64,
    pub scale: f64,
    pub mean_a: f64,
    /// Marginal (Student-t) variance of the weight.
    pub var_a: f64,
    pub mean_q: f64,
    pub var_q: f64,
}

/// Posterior from raw regressor/response pairs.
pub fn scalar_conjugate_posterior(
    pairs: &[(f64, f64)],
    prior_v: f64,
    prior_dof: f64,
    prior_scale: f64,
) -> ScalarConjugatePosterior {
    let phi: f64 = pairs.iter().map(|(_, zeta)| zeta * zeta).sum();
    let psi: f64 = pairs.iter().map(|(z, zeta)| zeta * z).sum();
    let sigma: f64 = pairs.iter().map(|(z, _)| z * z).sum();
    let n = pairs.len() as f64;

    let s = sigma + prior_v;
    let dof = prior_dof + n;
    let scale = prior_scale + phi - psi * psi / s;
    let mean_a = psi / s;
    let mean_q = scale / (dof - 2.0);
    let var_q = 2.0 * scale * scale / ((dof - 2.0) * (dof - 2.0) * (dof - 4.0));
    let var_a = scale / ((dof - 2.0) * s);
    ScalarConjugatePosterior {
        dof,
        scale,
        mean_a,
        var_a,
        mean_q,
        var_q,
    }
}
