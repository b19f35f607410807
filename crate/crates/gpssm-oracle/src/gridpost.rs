//! Grid-quadrature posteriors for scalar models: moments of arbitrary
//! one-dimensional log-densities, and the exact joint posterior over the
//! transition weight and process noise of a scalar linear-Gaussian state
//! space model (Kalman marginal likelihood times conjugate priors).

use crate::kalman::{kalman_filter, rts_smoother, ScalarSsm};
use crate::quadrature::gauss_legendre;

/// Mean and variance of an unnormalized 1-D density given through its log,
/// by Gauss-Legendre quadrature over [lo, hi].
pub fn moments_1d<F: Fn(f64) -> f64>(ln_density: F, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let (nodes, weights) = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let xs: Vec<f64> = nodes.iter().map(|&u| mid + half * u).collect();
    let lps: Vec<f64> = xs.iter().map(|&x| ln_density(x)).collect();
    let max_lp = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for ((&x, &lp), &w) in xs.iter().zip(&lps).zip(&weights) {
        let p = (lp - max_lp).exp() * w;
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Posterior summary for the scalar linear-Gaussian model with unknown
/// transition weight `a` and process noise `q`.
#[derive(Debug, Clone)]
pub struct ScalarLgPosterior {
    pub mean_a: f64,
    pub var_a: f64,
    pub mean_q: f64,
    pub var_q: f64,
    /// Smoothed state means E[x_t | y], marginalized over (a, q).
    pub smoothed_means: Vec<f64>,
    /// Smoothed state variances V[x_t | y], marginalized over (a, q).
    pub smoothed_vars: Vec<f64>,
}

/// Exact (up to quadrature) posterior of `(a, q, x_{1:T})` marginals for
///
/// ```text
/// x_{t+1} = a x_t + w,  w ~ N(0, q)
/// y_t     = c x_t + e,  e ~ N(0, r)
/// a | q ~ N(0, q / prior_v),  q ~ InvGamma(prior_dof/2, prior_scale/2)
/// ```
///
/// computed on an `n_a x n_q` Gauss-Legendre grid over `a` in
/// `[a_lo, a_hi]` and `ln q` in `[ln_q_lo, ln_q_hi]`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_lg_posterior(
    y: &[f64],
    c: f64,
    r: f64,
    m1: f64,
    p1: f64,
    prior_v: f64,
    prior_dof: f64,
    prior_scale: f64,
    a_range: (f64, f64),
    ln_q_range: (f64, f64),
    n_a: usize,
    n_q: usize,
) -> ScalarLgPosterior {
    let (nodes_a, weights_a) = gauss_legendre(n_a);
    let (nodes_q, weights_q) = gauss_legendre(n_q);
    let (a_half, a_mid) = (0.5 * (a_range.1 - a_range.0), 0.5 * (a_range.0 + a_range.1));
    let (u_half, u_mid) = (
        0.5 * (ln_q_range.1 - ln_q_range.0),
        0.5 * (ln_q_range.0 + ln_q_range.1),
    );
    let t_len = y.len();

    let mut cells: Vec<(f64, f64, f64)> = Vec::with_capacity(n_a * n_q); // (a, q, ln weight)
    let mut max_lp = f64::NEG_INFINITY;
    for (ia, &ua) in nodes_a.iter().enumerate() {
        let a = a_mid + a_half * ua;
        for (iq, &uq) in nodes_q.iter().enumerate() {
            let u = u_mid + u_half * uq;
            let q = u.exp();
            let model = ScalarSsm { a, c, q, r, m1, p1 };
            let loglik = kalman_filter(&model, y).loglik;
            // Priors: a | q normal, q inverse gamma, plus the log-space
            // Jacobian q from integrating over u = ln q.
            let lp_a = -0.5 * ((2.0 * std::f64::consts::PI * q / prior_v).ln()
                + a * a * prior_v / q);
            let (alpha, beta) = (0.5 * prior_dof, 0.5 * prior_scale);
            let lp_q = -(alpha + 1.0) * q.ln() - beta / q;
            let lp = loglik + lp_a + lp_q + q.ln() + (weights_a[ia] * weights_q[iq]).ln();
            max_lp = max_lp.max(lp);
            cells.push((a, q, lp));
        }
    }

    let mut z = 0.0;
    let (mut sa, mut saa, mut sq, mut sqq) = (0.0, 0.0, 0.0, 0.0);
    let mut sm = vec![0.0; t_len];
    let mut sv = vec![0.0; t_len];
    for &(a, q, lp) in &cells {
        let w = (lp - max_lp).exp();
        z += w;
        sa += w * a;
        saa += w * a * a;
        sq += w * q;
        sqq += w * q * q;
        let model = ScalarSsm { a, c, q, r, m1, p1 };
        let filter = kalman_filter(&model, y);
        let (means, vars) = rts_smoother(&model, &filter);
        for t in 0..t_len {
            sm[t] += w * means[t];
            sv[t] += w * (vars[t] + means[t] * means[t]);
        }
    }
    let mean_a = sa / z;
    let mean_q = sq / z;
    let smoothed_means: Vec<f64> = sm.iter().map(|s| s / z).collect();
    let smoothed_vars: Vec<f64> = sv
        .iter()
        .zip(&smoothed_means)
        .map(|(s, m)| s / z - m * m)
        .collect();
    ScalarLgPosterior {
        mean_a,
        var_a: saa / z - mean_a * mean_a,
        mean_q,
        var_q: sqq / z - mean_q * mean_q,
        smoothed_means,
        smoothed_vars,
    }
}
