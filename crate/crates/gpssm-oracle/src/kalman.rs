//! Scalar linear-Gaussian state space reference: Kalman filter with exact
//! marginal likelihood, Rauch-Tung-Striebel smoother, and the k-step-ahead
//! predictive. Model:
//!
//! ```text
//! x_{t+1} = a x_t + w_t,   w ~ N(0, q)
//! y_t     = c x_t + e_t,   e ~ N(0, r)
//! x_1 ~ N(m1, p1)
//! ```

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy)]
pub struct ScalarSsm {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m1: f64,
    pub p1: f64,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    /// Filtered means E[x_t | y_{1:t}].
    pub means: Vec<f64>,
    /// Filtered variances.
    pub vars: Vec<f64>,
    /// One-step-ahead predicted state means E[x_t | y_{1:t-1}].
    pub pred_means: Vec<f64>,
    pub pred_vars: Vec<f64>,
    /// Exact log marginal likelihood log p(y_{1:T}).
    pub loglik: f64,
}

pub fn kalman_filter(model: &ScalarSsm, y: &[f64]) -> FilterResult {
    let t_len = y.len();
    let mut means = Vec::with_capacity(t_len);
    let mut vars = Vec::with_capacity(t_len);
    let mut pred_means = Vec::with_capacity(t_len);
    let mut pred_vars = Vec::with_capacity(t_len);
    let mut loglik = 0.0;
    let (mut m_pred, mut p_pred) = (model.m1, model.p1);
    for &yt in y {
        pred_means.push(m_pred);
        pred_vars.push(p_pred);
        let s = model.c * p_pred * model.c + model.r;
        let resid = yt - model.c * m_pred;
        loglik += -0.5 * (LN_2PI + s.ln() + resid * resid / s);
        let gain = p_pred * model.c / s;
        let m_filt = m_pred + gain * resid;
        let p_filt = (1.0 - gain * model.c) * p_pred;
        means.push(m_filt);
        vars.push(p_filt);
        m_pred = model.a * m_filt;
        p_pred = model.a * p_filt * model.a + model.q;
    }
    FilterResult {
        means,
        vars,
        pred_means,
        pred_vars,
        loglik,
    }
}

/// Smoothed means and variances E[x_t | y_{1:T}], V[x_t | y_{1:T}].
pub fn rts_smoother(model: &ScalarSsm, filter: &FilterResult) -> (Vec<f64>, Vec<f64>) {
    let t_len = filter.means.len();
    let mut means = filter.means.clone();
    let mut vars = filter.vars.clone();
    for t in (0..t_len - 1).rev() {
        let p_pred = model.a * filter.vars[t] * model.a + model.q;
        let gain = filter.vars[t] * model.a / p_pred;
        means[t] = filter.means[t] + gain * (means[t + 1] - model.a * filter.means[t]);
        vars[t] = filter.vars[t] + gain * (vars[t + 1] - p_pred) * gain;
    }
    (means, vars)
}

/// Predictive distribution of y_{T+h}, h = 1..k, given y_{1:T}.
pub fn k_step_observation_predictive(model: &ScalarSsm, y: &[f64], k: usize) -> Vec<(f64, f64)> {
    let filter = kalman_filter(model, y);
    let mut m = *filter.means.last().expect("nonempty series");
    let mut p = *filter.vars.last().expect("nonempty series");
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        m = model.a * m;
        p = model.a * p * model.a + model.q;
        out.push((model.c * m, model.c * p * model.c + model.r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ScalarSsm {
        ScalarSsm {
            a: 0.8,
            c: 1.0,
            q: 0.3,
            r: 0.5,
            m1: 0.0,
            p1: 1.0,
        }
    }

    #[test]
    fn filter_reduces_variance_below_prediction() {
        let f = kalman_filter(&model(), &[0.4, -0.2, 0.9, 0.1]);
        for t in 0..4 {
            assert!(f.vars[t] < f.pred_vars[t]);
        }
    }

    #[test]
    fn smoother_variance_not_above_filter_variance() {
        let f = kalman_filter(&model(), &[0.4, -0.2, 0.9, 0.1, -0.6, 0.2]);
        let (_, sv) = rts_smoother(&model(), &f);
        for t in 0..6 {
            assert!(sv[t] <= f.vars[t] + 1e-12);
        }
    }

    #[test]
    fn loglik_matches_direct_joint_gaussian_for_t2() {
        // For T = 2 the marginal of (y_1, y_2) is an explicit bivariate
        // normal; compare against its density.
        let m = model();
        let y = [0.7, -0.3];
        let f = kalman_filter(&m, &y);
        let v11 = m.c * m.p1 * m.c + m.r;
        let p2 = m.a * m.p1 * m.a + m.q;
        let v22 = m.c * p2 * m.c + m.r;
        let v12 = m.c * m.a * m.p1 * m.c;
        let det = v11 * v22 - v12 * v12;
        let quad = (v22 * y[0] * y[0] - 2.0 * v12 * y[0] * y[1] + v11 * y[1] * y[1]) / det;
        let direct = -0.5 * (2.0 * LN_2PI + det.ln() + quad);
        assert!((f.loglik - direct).abs() < 1e-12);
    }

    #[test]
    fn k_step_predictive_variance_grows() {
        let preds = k_step_observation_predictive(&model(), &[0.4, -0.2, 0.9], 5);
        for w in preds.windows(2) {
            assert!(w[1].1 > w[0].1);
        }
    }
}
