//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! 1. benchmark-2 reproduction within the published band, 10 seeds;
//! 2. benchmark-1 posterior-variance growth away from the data;
//! 3. Gibbs exactness against a grid/Kalman oracle at N = 2 and N = 20;
//! 4. reduced-rank covariance convergence in the basis size;
//! 5. matrix-normal and inverse-Wishart sampler and density checks;
//! 6. Metropolis-within-Gibbs correctness against grid quadrature;
//! 7. per-iteration cost scaling when the series length doubles;
//! 8. k-step forecasts against the exact linear-Gaussian predictive.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gpssm::evaluate::forecast_k_step;
use gpssm::gibbs::{
    mh_hyperparameter_step, mniw_posterior, run_gibbs, sufficient_statistics, ChainInit,
    GibbsSettings, ModelStructure,
};
use gpssm::model::{Features, Gaussian, GpSsm, Measurement, PriorSpec, ThetaPrior};
use gpssm::{
    iw_logpdf, mn_logpdf, sample_iw, sample_mn, BasisConfig, Domain, KernelSpec,
};
use gpssm_cli::gen::Benchmark2;
use gpssm_cli::run::{run_bench1, run_bench2, BenchOptions};
use gpssm_oracle::gridpost::scalar_lg_posterior;
use gpssm_oracle::kalman::{k_step_observation_predictive, ScalarSsm};
use gpssm_oracle::quadrature::gauss_legendre;
use gpssm_oracle::stats::{
    batch_means_se, batch_means_se_of_variance, mean_and_var, standard_error_of_mean,
};

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("gpssm-acceptance-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn criterion_1_benchmark2_reproduction() {
    let start = Instant::now();
    let out = tempdir("bench2");
    let mut rmses = Vec::new();
    let mut lls = Vec::new();
    for seed in 0..10u64 {
        let dir = out.join(format!("seed_{seed}"));
        let outcome = run_bench2(BenchOptions::new(500, 100_000, seed), &dir).unwrap();
        rmses.push(outcome.metrics.rmse);
        lls.push(outcome.metrics.ll);
    }
    let mean_rmse = rmses.iter().sum::<f64>() / rmses.len() as f64;
    let mean_ll = lls.iter().sum::<f64>() / lls.len() as f64;
    std::fs::remove_dir_all(&out).ok();
    assert!(
        (0.95..=1.30).contains(&mean_rmse),
        "mean RMSE over 10 seeds = {mean_rmse:.4}, outside [0.95, 1.30] (per seed: {rmses:?})"
    );
    assert!(
        (-1.85..=-1.35).contains(&mean_ll),
        "mean LL over 10 seeds = {mean_ll:.4}, outside [-1.85, -1.35] (per seed: {lls:?})"
    );
    println!(
        "acceptance 1 benchmark2-reproduction: PASS (rmse {mean_rmse:.4}, ll {mean_ll:.4}, {:.0?})",
        start.elapsed()
    );
}

#[test]
fn criterion_2_benchmark1_variance_growth() {
    let start = Instant::now();
    let out = tempdir("bench1");
    run_bench1(BenchOptions::new(500, 10_000, 0), &out).unwrap();
    let text = std::fs::read_to_string(out.join("f_profile.csv")).unwrap();
    let at = |target: f64| -> f64 {
        text.lines()
            .skip(1)
            .map(|l| {
                let fields: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
                (fields[0], fields[2])
            })
            .min_by(|a, b| {
                (a.0 - target)
                    .abs()
                    .partial_cmp(&(b.0 - target).abs())
                    .unwrap()
            })
            .unwrap()
            .1
    };
    let (std_minus, std_zero, std_plus) = (at(-3.0), at(0.0), at(3.0));
    std::fs::remove_dir_all(&out).ok();
    assert!(
        std_plus >= 3.0 * std_zero && std_minus >= 3.0 * std_zero,
        "posterior std of f: at -3 {std_minus:.4}, at 0 {std_zero:.4}, at +3 {std_plus:.4}"
    );
    println!(
        "acceptance 2 benchmark1-variance-growth: PASS (ratios {:.1}x / {:.1}x, {:.0?})",
        std_minus / std_zero,
        std_plus / std_zero,
        start.elapsed()
    );
}

/// Scalar linear-Gaussian testbed shared by criteria 3 and 8.
fn linear_model(a: f64, q: f64, r: f64) -> GpSsm {
    GpSsm::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, q),
        Features::Linear {
            state_dim: 1,
            input_dim: 0,
        },
        Measurement::identity(1, r),
        Gaussian::standard(1),
    )
    .unwrap()
}

#[test]
fn criterion_3_gibbs_exactness_oracle() {
    let start = Instant::now();
    let (a_true, q_true, r) = (0.8, 0.3, 0.4);
    let (prior_v, prior_dof, prior_scale) = (1.0, 6.0, 1.0);
    let truth = linear_model(a_true, q_true, r)
        .simulate(40, None, &mut ChaCha8Rng::seed_from_u64(1234))
        .unwrap();
    let y: Vec<f64> = truth.observations.iter().map(|v| v[0]).collect();

    let oracle = scalar_lg_posterior(
        &y,
        1.0,
        r,
        0.0,
        1.0,
        prior_v,
        prior_dof,
        prior_scale,
        (-0.6, 2.0),
        (-5.0, 2.5),
        140,
        140,
    );

    let structure = ModelStructure {
        features: Features::Linear {
            state_dim: 1,
            input_dim: 0,
        },
        measurement: Measurement::identity(1, r),
        init: Gaussian::standard(1),
        priors: PriorSpec {
            q_dof: prior_dof,
            q_scale: DMatrix::from_element(1, 1, prior_scale),
            theta_prior: ThetaPrior::standard(0),
        },
        linear_prior_precision: Some(DVector::from_element(1, prior_v)),
        obs_noise_prior: None,
    };
    let probe = 20;
    for n_particles in [2usize, 20] {
        let settings = GibbsSettings {
            iterations: 11_000,
            particles: n_particles,
            mh_steps: 0,
            ..GibbsSettings::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42 + n_particles as u64);
        let chain = run_gibbs(&truth.observations, None, &structure, &settings, &mut rng).unwrap();
        let records = &chain.records[1000..];
        let weights: Vec<f64> = records.iter().map(|r| r.weights[(0, 0)]).collect();
        let noises: Vec<f64> = records.iter().map(|r| r.process_noise[(0, 0)]).collect();
        let states: Vec<f64> = records.iter().map(|r| r.states[probe][0]).collect();

        for (name, chain_vals, oracle_mean, oracle_var) in [
            ("weight", &weights, oracle.mean_a, oracle.var_a),
            ("noise", &noises, oracle.mean_q, oracle.var_q),
            (
                "smoothed state",
                &states,
                oracle.smoothed_means[probe],
                oracle.smoothed_vars[probe],
            ),
        ] {
            let (mean, var) = mean_and_var(chain_vals);
            let se_mean = batch_means_se(chain_vals);
            let se_var = batch_means_se_of_variance(chain_vals);
            assert!(
                (mean - oracle_mean).abs() < 3.0 * se_mean,
                "N={n_particles} {name} mean {mean:.5} vs oracle {oracle_mean:.5} (3se {:.5})",
                3.0 * se_mean
            );
            assert!(
                (var - oracle_var).abs() < 3.0 * se_var,
                "N={n_particles} {name} var {var:.6} vs oracle {oracle_var:.6} (3se {:.6})",
                3.0 * se_var
            );
        }
    }
    println!(
        "acceptance 3 gibbs-exactness-oracle: PASS (N=2 and N=20, {:.0?})",
        start.elapsed()
    );
}

#[test]
fn criterion_4_basis_convergence() {
    let start = Instant::now();
    let domain = Domain::symmetric(1, 4.0).unwrap();
    let kernel = KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap();
    let exact = |x: f64, y: f64| (-(x - y) * (x - y) / 2.0).exp();
    let grid: Vec<f64> = (0..=40).map(|i| -2.0 + i as f64 * 0.1).collect();
    let mut errors = Vec::new();
    for m in [4usize, 8, 16, 32, 64] {
        let config = BasisConfig::tensor_grid(domain.clone(), m, kernel.clone()).unwrap();
        let mut max_err = 0.0f64;
        for &x in &grid {
            let xv = DVector::from_element(1, x);
            for &y in &grid {
                let yv = DVector::from_element(1, y);
                let approx = config.approx_covariance(&xv, &yv).unwrap();
                max_err = max_err.max((approx - exact(x, y)).abs());
            }
        }
        errors.push((m, max_err));
    }
    let at_32 = errors.iter().find(|(m, _)| *m == 32).unwrap().1;
    assert!(at_32 < 1e-2, "max grid error at m=32 is {at_32:.2e}");
    for pair in errors.windows(2) {
        assert!(
            pair[1].1 <= pair[0].1 + 1e-10,
            "error not nonincreasing: {errors:?}"
        );
    }
    println!(
        "acceptance 4 basis-convergence: PASS (err(32) {at_32:.2e}, {:.0?})",
        start.elapsed()
    );
}

#[test]
fn criterion_5_distribution_samplers() {
    let start = Instant::now();
    // Matrix-normal vec-covariance against the Kronecker product.
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let mean = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.0]);
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let v = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]);
    let v_inv = v.clone().try_inverse().unwrap();
    let n_draws = 100_000usize;
    let mut sums = [[0.0f64; 4]; 4];
    for _ in 0..n_draws {
        let a = sample_mn(&mut rng, &mean, &q, &v).unwrap();
        let d = [
            a[(0, 0)] - mean[(0, 0)],
            a[(1, 0)] - mean[(1, 0)],
            a[(0, 1)] - mean[(0, 1)],
            a[(1, 1)] - mean[(1, 1)],
        ];
        for i in 0..4 {
            for j in 0..4 {
                sums[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let truth = v_inv[(i / 2, j / 2)] * q[(i % 2, j % 2)];
            let emp = sums[i][j] / n_draws as f64;
            let vii = v_inv[(i / 2, i / 2)] * q[(i % 2, i % 2)];
            let vjj = v_inv[(j / 2, j / 2)] * q[(j % 2, j % 2)];
            let se = ((vii * vjj + truth * truth) / n_draws as f64).sqrt();
            assert!(
                (emp - truth).abs() < 3.0 * se,
                "vec-cov({i},{j}) {emp:.5} vs {truth:.5} (3se {:.5})",
                3.0 * se
            );
        }
    }

    // Inverse-Wishart scalar mean.
    let (ell, lambda) = (10.0, 1.0);
    let scale = DMatrix::from_element(1, 1, lambda);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| sample_iw(&mut rng, ell, &scale).unwrap()[(0, 0)])
        .collect();
    let (mean_q, var_q) = mean_and_var(&draws);
    let se = standard_error_of_mean(var_q, draws.len());
    let expected = lambda / (ell - 2.0);
    assert!(
        (mean_q - expected).abs() < 3.0 * se,
        "IW mean {mean_q:.5} vs {expected:.5} (3se {:.5})",
        3.0 * se
    );

    // Scalar inverse-Wishart density integrates to one.
    let (nodes, weights) = gauss_legendre(600);
    let mut integral = 0.0;
    for (&u, &w) in nodes.iter().zip(&weights) {
        let t = 0.5 * (u + 1.0);
        let q_val = t / (1.0 - t);
        let jac = 1.0 / ((1.0 - t) * (1.0 - t));
        let pdf = iw_logpdf(&DMatrix::from_element(1, 1, q_val), 5.0, &DMatrix::from_element(1, 1, 2.0))
            .unwrap()
            .exp();
        integral += w * 0.5 * pdf * jac;
    }
    assert!(
        (integral - 1.0).abs() < 1e-4,
        "IW density integrates to {integral}"
    );
    println!(
        "acceptance 5 distribution-samplers: PASS ({:.0?})",
        start.elapsed()
    );
}

#[test]
fn criterion_6_mh_against_quadrature() {
    let start = Instant::now();
    // Fixed conditioning state: a smooth trajectory, moderate noise, and
    // fixed (Q, A); the hyperparameter conditional is then a concrete 2-D
    // density we can integrate on a grid.
    let basis = BasisConfig::tensor_grid(
        Domain::symmetric(1, 4.0).unwrap(),
        3,
        KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap(),
    )
    .unwrap();
    let features = Features::Basis {
        state: basis,
        input: None,
    };
    let states: Vec<DVector<f64>> = (0..25)
        .map(|t| DVector::from_element(1, 1.8 * (t as f64 * 0.4).sin() + 0.3 * (t as f64 * 0.13).cos()))
        .collect();
    let stats = sufficient_statistics(&states, None, &features).unwrap();
    let priors = PriorSpec {
        q_dof: 10.0,
        q_scale: DMatrix::from_element(1, 1, 1.0),
        theta_prior: ThetaPrior::standard(2),
    };
    let noise = DMatrix::from_element(1, 1, 0.4);
    let weights_fixed = DMatrix::from_row_slice(1, 3, &[0.8, -0.3, 0.2]);

    // The target evaluated through the same public pieces the sampler uses.
    let log_target = |log_theta: &[f64]| -> f64 {
        let v = match features.prior_precision_diag_for(log_theta) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        let post = mniw_posterior(&stats, &v, priors.q_dof, &priors.q_scale).unwrap();
        priors.theta_prior.logpdf(log_theta)
            + iw_logpdf(&noise, post.dof, &post.scale).unwrap()
            + mn_logpdf(&weights_fixed, &post.mean, &noise, &post.col_precision).unwrap()
    };

    // Marginal moments by 2-D Gauss-Legendre quadrature.
    let (nodes, gl_weights) = gauss_legendre(160);
    let map = |u: f64| 6.0 * u; // [-6, 6] in each log coordinate
    let mut z = 0.0;
    let (mut m1, mut m2) = ([0.0f64; 2], [0.0f64; 2]);
    let mut max_lp = f64::NEG_INFINITY;
    let mut cells = Vec::with_capacity(160 * 160);
    for (&ua, &wa) in nodes.iter().zip(&gl_weights) {
        for (&ub, &wb) in nodes.iter().zip(&gl_weights) {
            let theta = [map(ua), map(ub)];
            let lp = log_target(&theta) + (wa * wb).ln();
            max_lp = max_lp.max(lp);
            cells.push((theta, lp));
        }
    }
    for (theta, lp) in cells {
        let w = (lp - max_lp).exp();
        z += w;
        for k in 0..2 {
            m1[k] += w * theta[k];
            m2[k] += w * theta[k] * theta[k];
        }
    }
    let quad_mean = [m1[0] / z, m1[1] / z];
    let quad_var = [
        m2[0] / z - quad_mean[0] * quad_mean[0],
        m2[1] / z - quad_mean[1] * quad_mean[1],
    ];

    // The Metropolis chain under test: a proposal wide enough to traverse
    // the conditional in well under the batch length, plus a burn-in
    // prefix, keep the batch-means error estimate honest.
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut log_theta = vec![0.0, 0.0];
    let n_steps = 100_000;
    let burn = 5_000;
    let mut draws0 = Vec::with_capacity(n_steps);
    let mut draws1 = Vec::with_capacity(n_steps);
    let mut accepted = 0usize;
    for step in 0..n_steps + burn {
        let (next, acc) = mh_hyperparameter_step(
            &log_theta,
            &features,
            &stats,
            &noise,
            &weights_fixed,
            &priors,
            0.35,
            &mut rng,
        )
        .unwrap();
        log_theta = next;
        if step >= burn {
            accepted += acc as usize;
            draws0.push(log_theta[0]);
            draws1.push(log_theta[1]);
        }
    }
    let acc_rate = accepted as f64 / n_steps as f64;
    assert!(
        (0.05..0.95).contains(&acc_rate),
        "degenerate acceptance rate {acc_rate}"
    );
    for (k, draws) in [(0usize, &draws0), (1usize, &draws1)] {
        let (mean, var) = mean_and_var(draws);
        let se_mean = batch_means_se(draws);
        let se_var = batch_means_se_of_variance(draws);
        assert!(
            (mean - quad_mean[k]).abs() < 3.0 * se_mean,
            "component {k}: chain mean {mean:.4} vs quadrature {:.4} (3se {:.4})",
            quad_mean[k],
            3.0 * se_mean
        );
        assert!(
            (var - quad_var[k]).abs() < 3.0 * se_var,
            "component {k}: chain var {var:.5} vs quadrature {:.5} (3se {:.5})",
            quad_var[k],
            3.0 * se_var
        );
    }
    println!(
        "acceptance 6 mh-vs-quadrature: PASS (acc {acc_rate:.2}, {:.0?})",
        start.elapsed()
    );
}

#[test]
fn criterion_7_complexity_scaling() {
    let start = Instant::now();
    let per_iteration_time = |t_len: usize| -> f64 {
        let (train, _) = Benchmark2 {
            t_len,
            ..Benchmark2::default()
        }
        .generate(7);
        let basis = BasisConfig::tensor_grid(
            Domain::symmetric(1, 16.0).unwrap(),
            20,
            KernelSpec::matern(2.5, 1.0, vec![1.0]).unwrap(),
        )
        .unwrap();
        let structure = ModelStructure::new(
            Features::Basis {
                state: basis,
                input: None,
            },
            Measurement::identity(1, 1.0),
        );
        let settings = GibbsSettings {
            iterations: 25,
            particles: 20,
            parallel: false,
            record_states: false,
            init: ChainInit::EvidenceWarmStart,
            ..GibbsSettings::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chain = run_gibbs(&train.observations, None, &structure, &settings, &mut rng).unwrap();
        let mut secs = chain.diagnostics.per_iteration_secs[5..].to_vec();
        secs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        secs[secs.len() / 2]
    };
    let t500 = per_iteration_time(500);
    let t1000 = per_iteration_time(1000);
    let ratio = t1000 / t500;
    assert!(
        ratio <= 2.5,
        "per-iteration time grew {ratio:.2}x when T doubled ({t500:.4}s -> {t1000:.4}s)"
    );
    println!(
        "acceptance 7 complexity-scaling: PASS (ratio {ratio:.2} <= 2.5, {:.0?})",
        start.elapsed()
    );
}

#[test]
fn criterion_8_forecast_consistency() {
    let start = Instant::now();
    let (a, q, r) = (0.85, 0.2, 0.3);
    let model = linear_model(a, q, r);
    let truth = model
        .simulate(60, None, &mut ChaCha8Rng::seed_from_u64(88))
        .unwrap();
    let y: Vec<f64> = truth.observations.iter().map(|v| v[0]).collect();
    let horizon = 4;
    let oracle = k_step_observation_predictive(
        &ScalarSsm {
            a,
            c: 1.0,
            q,
            r,
            m1: 0.0,
            p1: 1.0,
        },
        &y,
        horizon,
    );

    let structure = ModelStructure {
        features: Features::Linear {
            state_dim: 1,
            input_dim: 0,
        },
        measurement: Measurement::identity(1, r),
        init: Gaussian::standard(1),
        priors: PriorSpec::default_for(1, 0),
        linear_prior_precision: Some(DVector::from_element(1, 1.0)),
        obs_noise_prior: None,
    };
    let record = gpssm::gibbs::GibbsRecord {
        iter: 0,
        states: Vec::new(),
        weights: DMatrix::from_element(1, 1, a),
        process_noise: DMatrix::from_element(1, 1, q),
        theta: Vec::new(),
        mh_accepted: false,
        loglik: 0.0,
        obs_model: None,
    };
    let records = vec![record];

    let reps = 40;
    let mut means = vec![Vec::with_capacity(reps); horizon];
    let mut vars = vec![Vec::with_capacity(reps); horizon];
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + rep as u64);
        let pred = forecast_k_step(
            &records,
            &structure,
            &truth.observations,
            None,
            None,
            horizon,
            1500,
            true,
            &mut rng,
        )
        .unwrap();
        for h in 0..horizon {
            means[h].push(pred.mean[h][0]);
            vars[h].push(pred.variance[h][0]);
        }
    }
    for h in 0..horizon {
        let (mean, mean_var) = mean_and_var(&means[h]);
        let se_mean = standard_error_of_mean(mean_var, reps);
        let (var, var_var) = mean_and_var(&vars[h]);
        let se_var = standard_error_of_mean(var_var, reps);
        assert!(
            (mean - oracle[h].0).abs() < 3.0 * se_mean,
            "horizon {h}: forecast mean {mean:.5} vs Kalman {:.5} (3se {:.5})",
            oracle[h].0,
            3.0 * se_mean
        );
        assert!(
            (var - oracle[h].1).abs() < 3.0 * se_var,
            "horizon {h}: forecast var {var:.5} vs Kalman {:.5} (3se {:.5})",
            oracle[h].1,
            3.0 * se_var
        );
    }
    println!(
        "acceptance 8 forecast-consistency: PASS ({:.0?})",
        start.elapsed()
    );
}
