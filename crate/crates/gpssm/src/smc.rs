//! Sequential Monte Carlo over the state space: systematic resampling, a
//! bootstrap particle filter, and the conditional particle filter with
//! ancestor sampling whose Markov kernel leaves the smoothing distribution
//! invariant for any particle count of at least two.
//!
//! All per-particle random draws come from counter-based substreams derived
//! from a single base value taken off the caller's generator once per time
//! step, so the parallel and sequential execution paths produce identical
//! results.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use thiserror::Error;

use crate::dists::{cholesky_jittered, DistError};
use crate::model::{GpSsm, Measurement, ModelError};
use crate::par;
use crate::rng::substream;

const LN_2PI: f64 = 1.8378770664093453;

fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("particle count must be at least 2, got {0}")]
    InvalidParticleCount(usize),
    #[error("all particle weights collapsed to zero at time {t}")]
    WeightCollapse { t: usize },
    #[error("reference trajectory length {reference} does not match {observations} observations")]
    ReferenceLengthMismatch { reference: usize, observations: usize },
    #[error("input sequence of length {found} is shorter than required {required}")]
    InputTooShort { required: usize, found: usize },
    #[error("observation sequence is empty")]
    EmptyObservations,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Full particle history of one sweep: per-time particle matrices
/// (`state_dim x n`), log-weights, and ancestor indices.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub states: Vec<DMatrix<f64>>,
    /// Unnormalized log-weights, `n x t_len`.
    pub log_weights: DMatrix<f64>,
    pub ancestors: Vec<Vec<usize>>,
    /// Slot that held the reference trajectory (the last one), when the
    /// sweep was conditional.
    pub reference_index: Option<usize>,
}

/// Result of one conditional or unconditional sweep.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub system: ParticleSystem,
    /// Standard SMC estimate of the log marginal likelihood.
    pub log_marginal: f64,
    /// Number of feature evaluations outside the basis domain.
    pub out_of_domain_evals: u64,
}

impl SweepOutput {
    /// Draws one ancestral path, choosing the terminal slot in proportion
    /// to the final weights.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<DVector<f64>>, SmcError> {
        let t_len = self.system.states.len();
        let last = t_len - 1;
        let probs = normalized_probs(self.system.log_weights.column(last).as_slice(), last)?;
        let mut idx = categorical(&probs, rng.random());
        let mut path = vec![DVector::zeros(0); t_len];
        path[last] = self.system.states[last].column(idx).into();
        for t in (0..last).rev() {
            idx = self.system.ancestors[t][idx];
            path[t] = self.system.states[t].column(idx).into();
        }
        Ok(path)
    }

    /// Final-time particles with their normalized weights.
    pub fn final_particles(&self) -> Result<(&DMatrix<f64>, Vec<f64>), SmcError> {
        let last = self.system.states.len() - 1;
        let probs = normalized_probs(self.system.log_weights.column(last).as_slice(), last)?;
        Ok((&self.system.states[last], probs))
    }
}

/// Systematic resampling: `n_draws` indices from normalized weights using
/// a single uniform `u` in [0, 1) with stratified offsets.
pub fn systematic_resample(probs: &[f64], n_draws: usize, u: f64) -> Vec<usize> {
    debug_assert!((0.0..1.0).contains(&u));
    let mut out = Vec::with_capacity(n_draws);
    let step = 1.0 / n_draws as f64;
    let mut i = 0;
    let mut cum = probs[0];
    for k in 0..n_draws {
        let target = (k as f64 + u) * step;
        while cum < target && i + 1 < probs.len() {
            i += 1;
            cum += probs[i];
        }
        out.push(i);
    }
    out
}

fn categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

fn normalized_probs(log_weights: &[f64], t: usize) -> Result<Vec<f64>, SmcError> {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SmcError::WeightCollapse { t });
    }
    let mut probs: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(probs)
}

/// Precomputed per-sweep quantities.
struct SweepCache {
    chol_q: Cholesky<f64, Dyn>,
    chol_r: Cholesky<f64, Dyn>,
    ln_norm_r: f64,
    ln_norm_q: f64,
}

impl SweepCache {
    fn new(model: &GpSsm) -> Result<Self, SmcError> {
        let chol_q = cholesky_jittered(&model.process_noise, "process noise")?;
        let chol_r = cholesky_jittered(model.measurement.noise(), "measurement noise")?;
        let ln_det = |c: &Cholesky<f64, Dyn>| {
            let l = c.l_dirty();
            2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
        };
        let n_y = model.obs_dim() as f64;
        let n_x = model.state_dim() as f64;
        Ok(Self {
            ln_norm_r: -0.5 * (n_y * LN_2PI + ln_det(&chol_r)),
            ln_norm_q: -0.5 * (n_x * LN_2PI + ln_det(&chol_q)),
            chol_q,
            chol_r,
        })
    }

    /// Column-wise `log N(y | means_j, R)`.
    fn obs_log_weights(&self, y: &DVector<f64>, means: &DMatrix<f64>) -> Vec<f64> {
        let mut diff = means.clone();
        for mut col in diff.column_iter_mut() {
            col.neg_mut();
            col += y;
        }
        let solved = self.chol_r.solve(&diff);
        (0..means.ncols())
            .map(|j| self.ln_norm_r - 0.5 * diff.column(j).dot(&solved.column(j)))
            .collect()
    }

    /// Column-wise `log N(target | means_j, Q)`.
    fn transition_logpdfs(&self, target: &DVector<f64>, means: &DMatrix<f64>) -> Vec<f64> {
        let mut diff = means.clone();
        for mut col in diff.column_iter_mut() {
            col.neg_mut();
            col += target;
        }
        let solved = self.chol_q.solve(&diff);
        (0..means.ncols())
            .map(|j| self.ln_norm_q - 0.5 * diff.column(j).dot(&solved.column(j)))
            .collect()
    }
}

/// Evaluates features for every particle column; returns the feature
/// matrix and the out-of-domain count.
fn particle_features(
    model: &GpSsm,
    particles: &DMatrix<f64>,
    input: Option<&DVector<f64>>,
    parallel: bool,
) -> (DMatrix<f64>, u64) {
    let n = particles.ncols();
    let m = model.feature_dim();
    let cols = par::map_range(parallel, n, |i| {
        let x = particles.column(i).into_owned();
        let mut z = DVector::zeros(m);
        let outside = model.features.eval_into(&x, input, &mut z);
        (z, outside)
    });
    let mut z_mat = DMatrix::zeros(m, n);
    let mut outside_count = 0;
    for (i, (z, outside)) in cols.into_iter().enumerate() {
        z_mat.set_column(i, &z);
        outside_count += outside as u64;
    }
    (z_mat, outside_count)
}

/// Observation means for every particle column.
fn observation_means(model: &GpSsm, particles: &DMatrix<f64>, features: &DMatrix<f64>) -> DMatrix<f64> {
    match &model.measurement {
        Measurement::LinearState { map, .. } => map * particles,
        Measurement::BasisWeights { map, .. } => {
            map * features.rows(0, model.features.state_feature_dim())
        }
    }
}

/// One application of the conditional particle filter with ancestor
/// sampling. Returns the sampled trajectory along with sweep diagnostics;
/// the invariant distribution of the induced Markov kernel is the
/// smoothing distribution under `model`.
pub fn pgas_kernel<R: Rng + ?Sized>(
    model: &GpSsm,
    reference: &[DVector<f64>],
    observations: &[DVector<f64>],
    inputs: Option<&[DVector<f64>]>,
    n_particles: usize,
    parallel: bool,
    rng: &mut R,
) -> Result<(Vec<DVector<f64>>, SweepOutput), SmcError> {
    if n_particles < 2 {
        return Err(SmcError::InvalidParticleCount(n_particles));
    }
    if reference.len() != observations.len() {
        return Err(SmcError::ReferenceLengthMismatch {
            reference: reference.len(),
            observations: observations.len(),
        });
    }
    let output = run_sweep(
        model,
        Some(reference),
        observations,
        inputs,
        n_particles,
        parallel,
        rng,
    )?;
    let trajectory = output.sample_path(rng)?;
    Ok((trajectory, output))
}

/// Unconditional bootstrap particle filter.
pub fn bootstrap_filter<R: Rng + ?Sized>(
    model: &GpSsm,
    observations: &[DVector<f64>],
    inputs: Option<&[DVector<f64>]>,
    n_particles: usize,
    parallel: bool,
    rng: &mut R,
) -> Result<SweepOutput, SmcError> {
    if n_particles < 2 {
        return Err(SmcError::InvalidParticleCount(n_particles));
    }
    run_sweep(model, None, observations, inputs, n_particles, parallel, rng)
}

fn run_sweep<R: Rng + ?Sized>(
    model: &GpSsm,
    reference: Option<&[DVector<f64>]>,
    observations: &[DVector<f64>],
    inputs: Option<&[DVector<f64>]>,
    n_particles: usize,
    parallel: bool,
    rng: &mut R,
) -> Result<SweepOutput, SmcError> {
    let t_len = observations.len();
    if t_len == 0 {
        return Err(SmcError::EmptyObservations);
    }
    if model.features.input_dim() > 0 {
        let required = t_len.saturating_sub(1);
        let found = inputs.map_or(0, |u| u.len());
        if found < required {
            return Err(SmcError::InputTooShort { required, found });
        }
    }
    let cache = SweepCache::new(model)?;
    let n = n_particles;
    let n_x = model.state_dim();
    let n_free = if reference.is_some() { n - 1 } else { n };

    let chol_init = cholesky_jittered(&model.init.cov, "initial state covariance")?;
    let init_l = chol_init.l();

    let mut states: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    let mut log_weights = DMatrix::zeros(n, t_len);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
    let mut log_marginal = 0.0;
    let mut out_of_domain = 0u64;

    // Placeholder for feature evaluation at the final step, where the
    // input sequence may legitimately end one entry short (inputs only
    // drive transitions); the input block never affects that step.
    let zero_input = DVector::zeros(model.features.input_dim());

    // Initial particles.
    let base0 = rng.next_u64();
    let init_cols = par::map_range(parallel, n_free, |i| {
        let mut local = substream(base0, i as u64);
        let z = standard_normal_vector(n_x, &mut local);
        &model.init.mean + &init_l * z
    });
    let mut particles = DMatrix::zeros(n_x, n);
    for (i, col) in init_cols.iter().enumerate() {
        particles.set_column(i, col);
    }
    if let Some(reference) = reference {
        particles.set_column(n - 1, &reference[0]);
    }

    for t in 0..t_len {
        let input_t = if model.features.input_dim() > 0 {
            Some(inputs.and_then(|u| u.get(t)).unwrap_or(&zero_input))
        } else {
            None
        };
        let (features, ood) = particle_features(model, &particles, input_t, parallel);
        out_of_domain += ood;

        let obs_means = observation_means(model, &particles, &features);
        let lw = cache.obs_log_weights(&observations[t], &obs_means);
        for (i, &w) in lw.iter().enumerate() {
            log_weights[(i, t)] = w;
        }
        let probs = normalized_probs(&lw, t)?;
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean_w: f64 = lw.iter().map(|&w| (w - max).exp()).sum::<f64>() / n as f64;
        log_marginal += max + mean_w.ln();

        states.push(particles.clone());
        if t + 1 == t_len {
            break;
        }

        // Transition means for every particle (needed both for propagation
        // and for the reference's ancestor weights).
        let trans_means = &model.weights * &features;

        let u_resample: f64 = rng.random();
        let mut anc = systematic_resample(&probs, n_free, u_resample);
        if reference.is_some() {
            let u_ancestor: f64 = rng.random();
            let ref_next = &reference.expect("conditional sweep")[t + 1];
            let trans_lp = cache.transition_logpdfs(ref_next, &trans_means);
            let law: Vec<f64> = lw.iter().zip(&trans_lp).map(|(a, b)| a + b).collect();
            let aprobs = normalized_probs(&law, t)?;
            anc.push(categorical(&aprobs, u_ancestor));
        }

        let base = rng.next_u64();
        let q_l = cache.chol_q.l_dirty();
        let next_cols = par::map_range(parallel, n_free, |i| {
            let mut local = substream(base, i as u64);
            let z = standard_normal_vector(n_x, &mut local);
            let mut x = trans_means.column(anc[i]).into_owned();
            // Lower-triangular multiply, done by hand to use the dirty factor.
            for r in (0..n_x).rev() {
                let mut acc = 0.0;
                for c in 0..=r {
                    acc += q_l[(r, c)] * z[c];
                }
                x[r] += acc;
            }
            x
        });
        let mut next = DMatrix::zeros(n_x, n);
        for (i, col) in next_cols.iter().enumerate() {
            next.set_column(i, col);
        }
        if let Some(reference) = reference {
            next.set_column(n - 1, &reference[t + 1]);
        }
        ancestors.push(anc);
        particles = next;
    }

    Ok(SweepOutput {
        system: ParticleSystem {
            states,
            log_weights,
            ancestors,
            reference_index: reference.map(|_| n - 1),
        },
        log_marginal,
        out_of_domain_evals: out_of_domain,
    })
}
