//! Predictive evaluation: one-step-ahead and free-run posterior
//! predictions pooled over chain records, RMSE and mean log-likelihood
//! metrics, and particle-filter based k-step-ahead forecasting.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dists::cholesky_jittered;
use crate::gibbs::{GibbsError, GibbsRecord, ModelStructure};
use crate::model::ModelError;
use crate::par;
use crate::rng::substream;
use crate::smc::{bootstrap_filter, SmcError};

const LN_2PI: f64 = 1.8378770664093453;
/// Floor applied to pooled predictive variances inside the log-likelihood.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no chain records to evaluate")]
    EmptyChain,
    #[error("length mismatch: predictions {predictions}, targets {targets}")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("forecast horizon must be at least 1")]
    InvalidHorizon,
    #[error("samples per record must be at least 1")]
    InvalidSampleCount,
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-time Gaussian summary of pooled predictive samples.
#[derive(Debug, Clone)]
pub struct PredictiveSummary {
    pub mean: Vec<DVector<f64>>,
    /// Per-dimension population variances of the pooled samples.
    pub variance: Vec<DVector<f64>>,
    pub samples_per_point: usize,
}

impl PredictiveSummary {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Writes `t, mean, var, lo95, hi95` per line (per-dimension column
    /// groups when the observation is multivariate).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n_dim = self.mean.first().map_or(0, |m| m.len());
        if n_dim == 1 {
            writeln!(w, "t,mean,var,lo95,hi95")?;
        } else {
            let mut header = String::from("t");
            for d in 1..=n_dim {
                header.push_str(&format!(",mean{d},var{d},lo95_{d},hi95_{d}"));
            }
            writeln!(w, "{header}")?;
        }
        for t in 0..self.len() {
            let mut line = format!("{}", t + 1);
            for d in 0..n_dim {
                let (m, v) = (self.mean[t][d], self.variance[t][d]);
                let half = 1.959963984540054 * v.sqrt();
                line.push_str(&format!(",{:?},{:?},{:?},{:?}", m, v, m - half, m + half));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// What to predict.
pub enum PredictInput<'a> {
    /// Distribution of the next observation `g(x_{t+1})` given the true
    /// state at each conditioning point (process noise only; measurement
    /// noise is excluded because the target is the next state's output).
    OneStep {
        states: &'a [DVector<f64>],
        inputs: Option<&'a [DVector<f64>]>,
    },
    /// Closed-loop simulation of outputs from a fixed initial state
    /// (process and measurement noise both enter).
    FreeRun {
        initial_state: DVector<f64>,
        horizon: usize,
        inputs: Option<&'a [DVector<f64>]>,
    },
}

struct Welford {
    count: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        for d in 0..x.len() {
            let delta = x[d] - self.mean[d];
            self.mean[d] += delta / self.count as f64;
            self.m2[d] += delta * (x[d] - self.mean[d]);
        }
    }

    fn finish(self) -> (DVector<f64>, DVector<f64>) {
        let n = self.count.max(1) as f64;
        (self.mean, self.m2 / n)
    }
}

/// Pools per-record predictive simulations into per-time Gaussian
/// summaries. Every retained record contributes `samples_per_record`
/// simulated predictions per time point.
pub fn posterior_predictive<R: Rng + ?Sized>(
    records: &[GibbsRecord],
    structure: &ModelStructure,
    input: PredictInput<'_>,
    samples_per_record: usize,
    parallel: bool,
    rng: &mut R,
) -> Result<PredictiveSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyChain);
    }
    if samples_per_record == 0 {
        return Err(EvalError::InvalidSampleCount);
    }
    let base = rng.next_u64();
    match input {
        PredictInput::OneStep { states, inputs } => {
            one_step_predictive(records, structure, states, inputs, samples_per_record, parallel, base)
        }
        PredictInput::FreeRun {
            initial_state,
            horizon,
            inputs,
        } => free_run_predictive(
            records,
            structure,
            &initial_state,
            horizon,
            inputs,
            samples_per_record,
            parallel,
            base,
        ),
    }
}

fn one_step_predictive(
    records: &[GibbsRecord],
    structure: &ModelStructure,
    states: &[DVector<f64>],
    inputs: Option<&[DVector<f64>]>,
    samples_per_record: usize,
    parallel: bool,
    base: u64,
) -> Result<PredictiveSummary, EvalError> {
    let models: Vec<_> = records
        .iter()
        .map(|r| structure.model_for_record(r))
        .collect::<Result<Vec<_>, _>>()?;
    let chols: Vec<_> = models
        .iter()
        .map(|m| cholesky_jittered(&m.process_noise, "process noise").map(|c| c.l()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(GibbsError::from)?;
    let n_records = models.len();
    let s = samples_per_record;
    let t_len = states.len();

    let results = par::map_range(parallel, t_len, |t| {
        let mut acc = Welford::new(structure.measurement.obs_dim());
        let u_t = inputs.map(|u| &u[t]);
        let z = models[0]
            .features
            .eval(&states[t], u_t)
            .expect("dimensions validated by model constructor");
        for (r, model) in models.iter().enumerate() {
            let f = &model.weights * &z;
            let mut local = substream(base, (r * t_len + t) as u64);
            for _ in 0..s {
                let mut x_next = f.clone();
                x_next += &chols[r] * standard_normal(&mut local, f.len());
                let y = model
                    .observation_mean(&x_next)
                    .expect("dimensions validated by model constructor");
                acc.push(&y);
            }
        }
        acc.finish()
    });
    let (mut mean, mut variance) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len));
    for (m, v) in results {
        mean.push(m);
        variance.push(v);
    }
    Ok(PredictiveSummary {
        mean,
        variance,
        samples_per_point: n_records * s,
    })
}

#[allow(clippy::too_many_arguments)]
fn free_run_predictive(
    records: &[GibbsRecord],
    structure: &ModelStructure,
    initial_state: &DVector<f64>,
    horizon: usize,
    inputs: Option<&[DVector<f64>]>,
    samples_per_record: usize,
    parallel: bool,
    base: u64,
) -> Result<PredictiveSummary, EvalError> {
    if horizon == 0 {
        return Err(EvalError::InvalidHorizon);
    }
    let models: Vec<_> = records
        .iter()
        .map(|r| structure.model_for_record(r))
        .collect::<Result<Vec<_>, _>>()?;
    let n_y = structure.measurement.obs_dim();

    // Per-record rollouts in parallel, reduced in record order.
    let partials = par::map_range(parallel, models.len(), |r| {
        let model = &models[r];
        let chol_q = cholesky_jittered(&model.process_noise, "process noise")
            .expect("validated by model constructor")
            .l();
        let chol_r = cholesky_jittered(model.measurement.noise(), "measurement noise")
            .expect("validated by model constructor")
            .l();
        let mut sums = vec![DVector::<f64>::zeros(n_y); horizon];
        let mut sq_sums = vec![DVector::<f64>::zeros(n_y); horizon];
        let mut local = substream(base, r as u64);
        for _ in 0..samples_per_record {
            let mut x = initial_state.clone();
            for t in 0..horizon {
                let u_t = inputs.map(|u| &u[t]);
                let y_mean = model.observation_mean(&x).expect("validated dimensions");
                let y = y_mean + &chol_r * standard_normal(&mut local, n_y);
                for d in 0..n_y {
                    sums[t][d] += y[d];
                    sq_sums[t][d] += y[d] * y[d];
                }
                if t + 1 < horizon {
                    let f = model.transition_mean(&x, u_t).expect("validated dimensions");
                    x = f + &chol_q * standard_normal(&mut local, x.len());
                }
            }
        }
        (sums, sq_sums)
    });

    let n_total = (models.len() * samples_per_record) as f64;
    let mut mean = vec![DVector::<f64>::zeros(n_y); horizon];
    let mut sq = vec![DVector::<f64>::zeros(n_y); horizon];
    for (sums, sq_sums) in partials {
        for t in 0..horizon {
            mean[t] += &sums[t];
            sq[t] += &sq_sums[t];
        }
    }
    let mut variance = Vec::with_capacity(horizon);
    for t in 0..horizon {
        mean[t] /= n_total;
        let mut v = DVector::zeros(n_y);
        for d in 0..n_y {
            v[d] = (sq[t][d] / n_total - mean[t][d] * mean[t][d]).max(0.0);
        }
        variance.push(v);
    }
    Ok(PredictiveSummary {
        mean,
        variance,
        samples_per_point: models.len() * samples_per_record,
    })
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

/// Root mean square error of the predictive means against targets.
pub fn rmse(pred: &PredictiveSummary, targets: &[DVector<f64>]) -> Result<f64, EvalError> {
    if pred.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            predictions: pred.len(),
            targets: targets.len(),
        });
    }
    let total: f64 = pred
        .mean
        .iter()
        .zip(targets)
        .map(|(m, y)| (m - y).norm_squared())
        .sum();
    Ok((total / targets.len() as f64).sqrt())
}

/// Mean Gaussian log-likelihood of the targets under the per-time
/// moment-matched predictive (independent across dimensions); variances
/// are floored at 1e-12.
pub fn mean_loglik(pred: &PredictiveSummary, targets: &[DVector<f64>]) -> Result<f64, EvalError> {
    if pred.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            predictions: pred.len(),
            targets: targets.len(),
        });
    }
    let mut total = 0.0;
    for t in 0..targets.len() {
        for d in 0..targets[t].len() {
            let v = pred.variance[t][d].max(VARIANCE_FLOOR);
            let resid = targets[t][d] - pred.mean[t][d];
            total += -0.5 * (LN_2PI + v.ln() + resid * resid / v);
        }
    }
    Ok(total / targets.len() as f64)
}

/// Runs a bootstrap particle filter over `y_history` per retained record,
/// then propagates the terminal particle cloud `horizon` steps without
/// conditioning and pools the predicted observations (measurement noise
/// included).
#[allow(clippy::too_many_arguments)]
pub fn forecast_k_step<R: Rng + ?Sized>(
    records: &[GibbsRecord],
    structure: &ModelStructure,
    y_history: &[DVector<f64>],
    u_history: Option<&[DVector<f64>]>,
    u_future: Option<&[DVector<f64>]>,
    horizon: usize,
    n_filter_particles: usize,
    parallel: bool,
    rng: &mut R,
) -> Result<PredictiveSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyChain);
    }
    if horizon == 0 {
        return Err(EvalError::InvalidHorizon);
    }
    let models: Vec<_> = records
        .iter()
        .map(|r| structure.model_for_record(r))
        .collect::<Result<Vec<_>, _>>()?;
    let n_y = structure.measurement.obs_dim();
    let base = rng.next_u64();

    let partials: Vec<Result<_, EvalError>> = par::map_range(parallel, models.len(), |r| {
        let model = &models[r];
        let mut local = substream(base, r as u64);
        let sweep = bootstrap_filter(
            model,
            y_history,
            u_history,
            n_filter_particles,
            false,
            &mut local,
        )?;
        let (particles, weights) = sweep.final_particles()?;
        let chol_q = cholesky_jittered(&model.process_noise, "process noise")
            .map_err(GibbsError::from)?
            .l();
        let chol_r = cholesky_jittered(model.measurement.noise(), "measurement noise")
            .map_err(GibbsError::from)?
            .l();
        let mut sums = vec![DVector::<f64>::zeros(n_y); horizon];
        let mut sq_sums = vec![DVector::<f64>::zeros(n_y); horizon];
        for i in 0..particles.ncols() {
            let w = weights[i];
            let mut x: DVector<f64> = particles.column(i).into();
            for t in 0..horizon {
                let u_t = u_future.map(|u| &u[t]);
                let f = model.transition_mean(&x, u_t)?;
                x = f + &chol_q * standard_normal(&mut local, x.len());
                let y = model.observation_mean(&x)? + &chol_r * standard_normal(&mut local, n_y);
                for d in 0..n_y {
                    sums[t][d] += w * y[d];
                    sq_sums[t][d] += w * y[d] * y[d];
                }
            }
        }
        Ok((sums, sq_sums))
    });

    let mut mean = vec![DVector::<f64>::zeros(n_y); horizon];
    let mut sq = vec![DVector::<f64>::zeros(n_y); horizon];
    for partial in partials {
        let (sums, sq_sums) = partial?;
        for t in 0..horizon {
            mean[t] += &sums[t];
            sq[t] += &sq_sums[t];
        }
    }
    // Per-record weights sum to one, so the pool normalizer is the record
    // count.
    let n_total = models.len() as f64;
    let mut variance = Vec::with_capacity(horizon);
    for t in 0..horizon {
        mean[t] /= n_total;
        let mut v = DVector::zeros(n_y);
        for d in 0..n_y {
            v[d] = (sq[t][d] / n_total - mean[t][d] * mean[t][d]).max(0.0);
        }
        variance.push(v);
    }
    Ok(PredictiveSummary {
        mean,
        variance,
        samples_per_point: models.len() * n_filter_particles,
    })
}

/// Posterior mean and standard deviation of the transition function at
/// each probe point, across chain records (per state dimension).
pub fn transition_profile(
    records: &[GibbsRecord],
    structure: &ModelStructure,
    points: &[DVector<f64>],
) -> Result<Vec<(DVector<f64>, DVector<f64>)>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyChain);
    }
    let features = &structure.features;
    let n_x = features.state_dim();
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let z = features.eval(x, None)?;
        let mut acc = Welford::new(n_x);
        for record in records {
            acc.push(&(&record.weights * &z));
        }
        let (mean, var) = acc.finish();
        out.push((mean, var.map(|v| v.sqrt())));
    }
    Ok(out)
}

/// Flat metrics document for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub ll: f64,
    pub t_e: usize,
    pub protocol: String,
    pub burn_in: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisConfig, Domain, KernelSpec};
    use crate::model::{Features, Measurement};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis_1d(m: usize) -> BasisConfig {
        BasisConfig::tensor_grid(
            Domain::symmetric(1, 4.0).unwrap(),
            m,
            KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    fn structure_1d(m: usize, r: f64) -> ModelStructure {
        ModelStructure::new(
            Features::Basis {
                state: basis_1d(m),
                input: None,
            },
            Measurement::identity(1, r),
        )
    }

    fn record(weights: &[f64], q: f64) -> GibbsRecord {
        GibbsRecord {
            iter: 0,
            states: Vec::new(),
            weights: DMatrix::from_row_slice(1, weights.len(), weights),
            process_noise: DMatrix::from_element(1, 1, q),
            theta: vec![1.0, 1.0],
            mh_accepted: false,
            loglik: 0.0,
            obs_model: None,
        }
    }

    fn scalars(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn degenerate_chain_predicts_exactly_zero() {
        let structure = structure_1d(2, 1e-300);
        let records = vec![record(&[0.0, 0.0], 1e-300); 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = posterior_predictive(
            &records,
            &structure,
            PredictInput::OneStep {
                states: &scalars(&[0.2, -0.4, 0.9]),
                inputs: None,
            },
            4,
            false,
            &mut rng,
        )
        .unwrap();
        for t in 0..3 {
            assert!(pred.mean[t][0].abs() < 1e-140);
            assert!(pred.variance[t][0] < 1e-140);
        }
    }

    #[test]
    fn one_step_mean_matches_direct_simulation_oracle() {
        // Single "true model" record with many samples: the predictive
        // mean at each point must approach g(f(x)) = f(x).
        let structure = structure_1d(3, 0.1);
        let records = vec![record(&[0.9, -0.3, 0.1], 0.25)];
        let states = scalars(&[0.0, 0.7, -1.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = posterior_predictive(
            &records,
            &structure,
            PredictInput::OneStep {
                states: &states,
                inputs: None,
            },
            200_000,
            true,
            &mut rng,
        )
        .unwrap();
        let model = structure.model_for_record(&records[0]).unwrap();
        for t in 0..states.len() {
            let f = model.transition_mean(&states[t], None).unwrap();
            let se = (0.25f64 / 200_000.0).sqrt();
            assert!(
                (pred.mean[t][0] - f[0]).abs() < 4.0 * se,
                "t={t}: {} vs {}",
                pred.mean[t][0],
                f[0]
            );
            assert_relative_eq!(pred.variance[t][0], 0.25, max_relative = 0.05);
        }
    }

    #[test]
    fn free_run_variance_nondecreasing_for_contractive_prior() {
        // Contractive weights, no data: closed-loop variance accumulates.
        let structure = structure_1d(1, 0.05);
        let records = vec![record(&[0.4], 0.3)];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = posterior_predictive(
            &records,
            &structure,
            PredictInput::FreeRun {
                initial_state: DVector::from_element(1, 0.5),
                horizon: 6,
                inputs: None,
            },
            50_000,
            false,
            &mut rng,
        )
        .unwrap();
        for t in 1..6 {
            assert!(
                pred.variance[t][0] > pred.variance[t - 1][0] - 0.01,
                "variance dip at {t}"
            );
        }
    }

    #[test]
    fn pooled_variance_obeys_law_of_total_variance() {
        let structure = structure_1d(2, 0.1);
        let records = vec![
            record(&[0.8, -0.2], 0.2),
            record(&[0.5, 0.1], 0.4),
            record(&[1.1, -0.4], 0.1),
        ];
        let states = scalars(&[0.3, -0.8]);
        let s = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pooled = posterior_predictive(
            &records,
            &structure,
            PredictInput::OneStep {
                states: &states,
                inputs: None,
            },
            s,
            false,
            &mut rng,
        )
        .unwrap();
        // Identical substream base so the per-record runs reproduce the
        // pooled run's draws exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = rng.next_u64();
        let t_len = states.len();
        for t in 0..t_len {
            let mut per_mean = Vec::new();
            let mut per_var = Vec::new();
            for (r, rec) in records.iter().enumerate() {
                let model = structure.model_for_record(rec).unwrap();
                let z = model.features.eval(&states[t], None).unwrap();
                let f = &model.weights * &z;
                let chol = model.process_noise.clone().cholesky().unwrap().l();
                let mut local = substream(base, (r * t_len + t) as u64);
                let mut acc = Welford::new(1);
                for _ in 0..s {
                    let x = &f + &chol * standard_normal(&mut local, 1);
                    acc.push(&model.observation_mean(&x).unwrap());
                }
                let (m, v) = acc.finish();
                per_mean.push(m[0]);
                per_var.push(v[0]);
            }
            let within: f64 = per_var.iter().sum::<f64>() / per_var.len() as f64;
            let grand: f64 = per_mean.iter().sum::<f64>() / per_mean.len() as f64;
            let between: f64 = per_mean.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
                / per_mean.len() as f64;
            assert_relative_eq!(
                pooled.variance[t][0],
                within + between,
                max_relative = 1e-8
            );
            assert_relative_eq!(pooled.mean[t][0], grand, max_relative = 1e-10);
        }
    }

    #[test]
    fn rmse_worked_examples() {
        let pred = PredictiveSummary {
            mean: scalars(&[0.0, 0.0]),
            variance: scalars(&[1.0, 1.0]),
            samples_per_point: 1,
        };
        assert_relative_eq!(
            rmse(&pred, &scalars(&[3.0, 4.0])).unwrap(),
            3.5355339059327378,
            max_relative = 1e-14
        );
        assert_eq!(rmse(&pred, &scalars(&[0.0, 0.0])).unwrap(), 0.0);
        // Constant offset.
        assert_relative_eq!(
            rmse(&pred, &scalars(&[-1.3, -1.3])).unwrap(),
            1.3,
            max_relative = 1e-14
        );
    }

    #[test]
    fn rmse_rejects_length_mismatch() {
        let pred = PredictiveSummary {
            mean: scalars(&[0.0]),
            variance: scalars(&[1.0]),
            samples_per_point: 1,
        };
        assert!(matches!(
            rmse(&pred, &scalars(&[0.0, 1.0])),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mean_loglik_gaussian_normalizer() {
        let pred = PredictiveSummary {
            mean: scalars(&[0.3, -0.7, 1.1]),
            variance: scalars(&[1.0, 1.0, 1.0]),
            samples_per_point: 1,
        };
        let targets = scalars(&[0.3, -0.7, 1.1]);
        assert_relative_eq!(
            mean_loglik(&pred, &targets).unwrap(),
            -0.9189385332046727,
            max_relative = 1e-12
        );
        // Inflating all variances by c drops the value by log(c)/2.
        let inflated = PredictiveSummary {
            mean: pred.mean.clone(),
            variance: scalars(&[4.0, 4.0, 4.0]),
            samples_per_point: 1,
        };
        assert_relative_eq!(
            mean_loglik(&pred, &targets).unwrap() - mean_loglik(&inflated, &targets).unwrap(),
            0.5 * 4.0f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn mean_loglik_maximized_at_squared_residual_variance() {
        let targets = scalars(&[1.0]);
        let ll_at = |v: f64| {
            let pred = PredictiveSummary {
                mean: scalars(&[0.0]),
                variance: scalars(&[v]),
                samples_per_point: 1,
            };
            mean_loglik(&pred, &targets).unwrap()
        };
        let best = ll_at(1.0);
        assert!(ll_at(0.5) < best);
        assert!(ll_at(2.0) < best);
    }

    #[test]
    fn metrics_invariant_to_record_order() {
        let structure = structure_1d(2, 0.1);
        let mut records = vec![
            record(&[0.8, -0.2], 0.2),
            record(&[0.5, 0.1], 0.4),
            record(&[1.1, -0.4], 0.1),
        ];
        let states = scalars(&[0.3, -0.8, 0.5]);
        let targets = scalars(&[0.5, -0.2, 0.4]);
        let run = |records: &[GibbsRecord]| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let pred = posterior_predictive(
                records,
                &structure,
                PredictInput::OneStep {
                    states: &states,
                    inputs: None,
                },
                50_000,
                false,
                &mut rng,
            )
            .unwrap();
            (rmse(&pred, &targets).unwrap(), mean_loglik(&pred, &targets).unwrap())
        };
        let (r1, l1) = run(&records);
        records.reverse();
        let (r2, l2) = run(&records);
        assert_relative_eq!(r1, r2, max_relative = 5e-3);
        assert_relative_eq!(l1, l2, max_relative = 5e-3);
    }

    #[test]
    fn forecast_matches_one_step_on_final_point() {
        let structure = structure_1d(3, 0.2);
        let records = vec![record(&[0.9, -0.3, 0.1], 0.25)];
        let model = structure.model_for_record(&records[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let truth = model.simulate(30, None, &mut rng).unwrap();

        let fc = forecast_k_step(
            &records,
            &structure,
            &truth.observations,
            None,
            None,
            1,
            4000,
            false,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        // Filter with tiny R would pin the state; here compare against the
        // one-step predictive from the filtered cloud by brute force: with
        // moderate noise the forecast mean should sit near the one-step
        // mean from the true final state within the posterior spread.
        let f = model
            .transition_mean(truth.states.last().unwrap(), None)
            .unwrap();
        let spread = (0.25f64 + 0.2).sqrt();
        assert!(
            (fc.mean[0][0] - f[0]).abs() < 3.0 * spread,
            "{} vs {}",
            fc.mean[0][0],
            f[0]
        );
        assert_eq!(fc.len(), 1);
    }

    #[test]
    fn transition_profile_spread_reflects_record_spread() {
        let structure = structure_1d(2, 0.1);
        let records = vec![record(&[1.0, 0.0], 0.1), record(&[-1.0, 0.0], 0.1)];
        let profile = transition_profile(
            &records,
            &structure,
            &scalars(&[0.0]),
        )
        .unwrap();
        // phi_1(0) = 0.5, weights +-1 -> mean 0, std 0.5.
        assert_relative_eq!(profile[0].0[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(profile[0].1[0], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn predictive_csv_round_trips_floats() {
        let pred = PredictiveSummary {
            mean: scalars(&[0.1234567890123456]),
            variance: scalars(&[1.0 / 3.0]),
            samples_per_point: 10,
        };
        let mut buf = Vec::new();
        pred.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,mean,var,lo95,hi95");
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[0], "1");
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.1234567890123456);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
