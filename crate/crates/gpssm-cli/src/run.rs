//! End-to-end experiment orchestration: domain auto-sizing, multi-chain
//! learning, evaluation, forecasting, and the on-disk run layout
//! (`manifest.json`, `chain.ndjson`, `metrics.json`, `predictive.csv`, plus
//! benchmark extras).

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use gpssm::evaluate::{
    forecast_k_step, mean_loglik, posterior_predictive, rmse, transition_profile, EvalError,
    MetricsReport, PredictInput, PredictiveSummary,
};
use gpssm::gibbs::{
    read_chain, run_gibbs, write_chain, ChainHeader, ChainIoError, GibbsChain, GibbsError,
    GibbsRecord, ModelStructure,
};
use gpssm::model::{Features, Gaussian, GpSsm, Measurement, ModelError};
use gpssm::smc::{bootstrap_filter, SmcError};

use crate::config::{ConfigError, ExperimentConfig, ResolvedConfig, RunManifest};
use crate::data::{load_csv, CsvSchema, DataError, Dataset};
use crate::gen::{Benchmark1, Benchmark2};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHAIN_FILE: &str = "chain.ndjson";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIVE_FILE: &str = "predictive.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PROFILE_FILE: &str = "f_profile.csv";
pub const DATA_FILE: &str = "data.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    ChainIo(#[from] ChainIoError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chain thread panicked")]
    ChainPanic,
    #[error("dataset must contain input columns for a model with an input basis")]
    MissingInputs,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Bounds state magnitudes with one pilot bootstrap-filter pass, then
/// takes four times the bound per dimension.
///
/// The pilot model is a random walk (identity transition, unit process
/// noise): with the transition weights still unknown, a tracking filter
/// over the observations is the cheapest estimator of how much state
/// magnitude the data demands. The observed outputs mapped back through
/// the measurement map bound the scale from below.
pub fn auto_domain(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<f64>, RunError> {
    let n_x = config.model.state_dim;
    let n_y = dataset.obs_dim();
    let obs_map = match &config.model.obs_map {
        Some(rows) => DMatrix::from_fn(rows.len(), n_x, |i, j| rows[i][j]),
        None => DMatrix::identity(n_y, n_x),
    };
    let obs_noise = DMatrix::identity(n_y, n_y);
    let pilot = GpSsm::new(
        DMatrix::identity(n_x, n_x),
        DMatrix::identity(n_x, n_x),
        Features::Linear {
            state_dim: n_x,
            input_dim: 0,
        },
        Measurement::LinearState {
            map: obs_map.clone(),
            noise: obs_noise,
        },
        Gaussian::standard(n_x),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7069_6c6f_7421);
    let sweep = bootstrap_filter(&pilot, &dataset.observations, None, 200, true, &mut rng)?;
    let mut bounds = vec![0.0f64; n_x];
    for particles in &sweep.system.states {
        for j in 0..particles.ncols() {
            for k in 0..n_x {
                bounds[k] = bounds[k].max(particles[(k, j)].abs());
            }
        }
    }
    // Least-squares state reconstruction from each observation.
    if let Some(pinv) = (obs_map.transpose() * &obs_map)
        .try_inverse()
        .map(|g| g * obs_map.transpose())
    {
        for y in &dataset.observations {
            let x = &pinv * y;
            for k in 0..n_x {
                bounds[k] = bounds[k].max(x[k].abs());
            }
        }
    }
    Ok(bounds.iter().map(|b| (4.0 * b).max(1.0)).collect())
}

/// Mean (over state dimensions) variance of the observations mapped back
/// through the measurement map; sets the natural scale of the transition
/// function for the kernel-variance prior.
fn state_variance_scale(config: &ExperimentConfig, dataset: &Dataset) -> f64 {
    let n_x = config.model.state_dim;
    let n_y = dataset.obs_dim();
    let obs_map = match &config.model.obs_map {
        Some(rows) => DMatrix::from_fn(rows.len(), n_x, |i, j| rows[i][j]),
        None => DMatrix::identity(n_y, n_x),
    };
    let pinv = match (obs_map.transpose() * &obs_map).try_inverse() {
        Some(g) => g * obs_map.transpose(),
        None => return 1.0,
    };
    let xs: Vec<DVector<f64>> = dataset.observations.iter().map(|y| &pinv * y).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().fold(DVector::zeros(n_x), |acc, x| acc + x) / n;
    let var = xs
        .iter()
        .map(|x| (x - &mean).norm_squared())
        .sum::<f64>()
        / (n * n_x as f64);
    var.max(1e-12)
}

pub struct LearnOutput {
    pub resolved: ResolvedConfig,
    pub structure: ModelStructure,
    pub chains: Vec<GibbsChain>,
    pub train_secs: f64,
}

/// Resolves the configuration against a dataset, runs the requested number
/// of independent chains (derived seeds `seed + chain index`), and writes
/// the chain files under `out_dir`.
pub fn learn(
    dataset: &Dataset,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<LearnOutput, RunError> {
    let domain = match &config.model.domain_half_widths {
        Some(widths) => widths.clone(),
        None => auto_domain(config, dataset, config.seed)?,
    };
    let input_dim = dataset.input_dim();
    if config.model.input_features_per_dim > 0 && input_dim == 0 {
        return Err(RunError::MissingInputs);
    }
    let input_domain = if input_dim > 0 && config.model.input_features_per_dim > 0 {
        match &config.model.input_domain_half_widths {
            Some(w) => Some(w.clone()),
            None => {
                let inputs = dataset.inputs.as_ref().expect("input_dim > 0");
                let mut bounds = vec![0.0f64; input_dim];
                for u in inputs {
                    for k in 0..input_dim {
                        bounds[k] = bounds[k].max(u[k].abs());
                    }
                }
                // Inputs are observed exactly; a 25% margin keeps them
                // inside the box.
                Some(bounds.iter().map(|b| (1.25 * b).max(1.0)).collect())
            }
        }
    } else {
        None
    };
    let resolved = config.resolve(
        domain,
        input_domain,
        dataset.obs_dim(),
        input_dim,
        state_variance_scale(config, dataset),
    )?;
    let structure = resolved.to_structure()?;
    let settings = resolved.gibbs_settings();

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let start = Instant::now();
    let chains = if resolved.chains == 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
        vec![run_gibbs(
            &dataset.observations,
            dataset.inputs.as_deref(),
            &structure,
            &settings,
            &mut rng,
        )?]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..resolved.chains)
                .map(|chain_idx| {
                    let structure = &structure;
                    let settings = &settings;
                    let observations = &dataset.observations;
                    let inputs = dataset.inputs.as_deref();
                    let seed = resolved.seed + chain_idx as u64;
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        run_gibbs(observations, inputs, structure, settings, &mut rng)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .map_err(|_| RunError::ChainPanic)?
                        .map_err(RunError::from)
                })
                .collect::<Result<Vec<_>, _>>()
        })?
    };
    let train_secs = start.elapsed().as_secs_f64();

    let header = ChainHeader::for_structure(&structure, false);
    if chains.len() == 1 {
        write_chain_file(&out_dir.join(CHAIN_FILE), &header, &chains[0].records)?;
    } else {
        for (idx, chain) in chains.iter().enumerate() {
            let dir = out_dir.join(format!("chain_{idx:02}"));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_chain_file(&dir.join(CHAIN_FILE), &header, &chain.records)?;
        }
    }
    Ok(LearnOutput {
        resolved,
        structure,
        chains,
        train_secs,
    })
}

fn write_chain_file(
    path: &Path,
    header: &ChainHeader,
    records: &[GibbsRecord],
) -> Result<(), RunError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_chain(BufWriter::new(file), header, records)?;
    Ok(())
}

pub fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(())
}

pub fn write_metrics(out_dir: &Path, metrics: &MetricsReport) -> Result<(), RunError> {
    let path = out_dir.join(METRICS_FILE);
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(())
}

pub fn write_predictive(out_dir: &Path, pred: &PredictiveSummary) -> Result<(), RunError> {
    let path = out_dir.join(PREDICTIVE_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    pred.write_csv(&mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

fn diagnostics_json(chain: &GibbsChain) -> serde_json::Value {
    let d = &chain.diagnostics;
    serde_json::json!({
        "mh_acceptance_rate": d.mh_acceptance_rate,
        "out_of_domain_evals": d.out_of_domain_evals,
        "trajectory_secs": d.timings.trajectory_secs,
        "conjugate_secs": d.timings.conjugate_secs,
        "hyper_secs": d.timings.hyper_secs,
        "total_secs": d.timings.total_secs,
        "final_proposal_scale": d.final_proposal_scale,
    })
}

/// One-step-ahead evaluation against a known state sequence: for every
/// conditioning state the model predicts the next output, which is scored
/// against the realized next state (measurement noise excluded).
pub struct OneStepEvaluation {
    pub metrics: MetricsReport,
    pub predictive: PredictiveSummary,
    pub test_secs: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_one_step(
    records: &[GibbsRecord],
    structure: &ModelStructure,
    conditioning: &[DVector<f64>],
    targets: &[DVector<f64>],
    resolved: &ResolvedConfig,
    parallel: bool,
    seed: u64,
) -> Result<OneStepEvaluation, RunError> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let predictive = posterior_predictive(
        records,
        structure,
        PredictInput::OneStep {
            states: conditioning,
            inputs: None,
        },
        resolved.evaluation.samples_per_record,
        parallel,
        &mut rng,
    )?;
    let metrics = MetricsReport {
        rmse: rmse(&predictive, targets)?,
        ll: mean_loglik(&predictive, targets)?,
        t_e: targets.len(),
        protocol: "one_step".to_string(),
        burn_in: resolved.burn_in(),
        seed: resolved.seed,
    };
    Ok(OneStepEvaluation {
        metrics,
        predictive,
        test_secs: start.elapsed().as_secs_f64(),
    })
}

fn write_summary_row(
    out_dir: &Path,
    dataset: &str,
    metrics: &MetricsReport,
    train_secs: f64,
    test_secs: f64,
) -> Result<(), RunError> {
    let path = out_dir.join(SUMMARY_FILE);
    let mut text = String::from("dataset,method,rmse,ll,train_time_min,test_time_s\n");
    text.push_str(&format!(
        "{dataset},reduced_rank_gpssm,{:?},{:?},{:?},{:?}\n",
        metrics.rmse,
        metrics.ll,
        train_secs / 60.0,
        test_secs
    ));
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

/// Shared result of the benchmark modes.
pub struct BenchOutcome {
    pub metrics: MetricsReport,
    pub out_dir: PathBuf,
}

/// Benchmark knobs shared by both synthetic modes.
#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub t_train: usize,
    pub t_eval: usize,
    pub seed: u64,
    /// Override the benchmark's default domain half-width.
    pub domain_half_width: Option<f64>,
    /// Override the default number of eigenfunctions.
    pub features: Option<usize>,
    /// Override the default iteration count.
    pub iterations: Option<usize>,
    /// Override the default particle count.
    pub particles: Option<usize>,
}

impl BenchOptions {
    pub fn new(t_train: usize, t_eval: usize, seed: u64) -> Self {
        Self {
            t_train,
            t_eval,
            seed,
            domain_half_width: None,
            features: None,
            iterations: None,
            particles: None,
        }
    }

    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(l) = self.domain_half_width {
            config.model.domain_half_widths = Some(vec![l]);
        }
        if let Some(m) = self.features {
            config.model.features_per_dim = m;
        }
        if let Some(k) = self.iterations {
            config.sampler.iterations = k;
        }
        if let Some(n) = self.particles {
            config.sampler.particles = n;
        }
    }
}

/// First synthetic benchmark: saturating dynamics, squared-exponential
/// kernel on the paper-sized box. Writes a posterior transition profile
/// for plotting next to the usual run outputs.
pub fn run_bench1(options: BenchOptions, out_dir: &Path) -> Result<BenchOutcome, RunError> {
    let BenchOptions {
        t_train,
        t_eval,
        seed,
        ..
    } = options;
    let mut config = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    config.model.domain_half_widths = Some(vec![4.0]);
    config.model.kernel = Some("squared_exponential".to_string());
    config.model.obs_noise = Some(serde_json::json!(0.1));
    config.priors.q_dof = Some(10.0);
    config.priors.q_scale = Some(1.0);
    options.apply(&mut config);

    let generator = Benchmark1 {
        t_len: t_train,
        ..Benchmark1::default()
    };
    let (train, _) = generator.generate(seed);
    let output = learn(&train, &config, out_dir)?;

    let eval_gen = Benchmark1 {
        t_len: t_eval,
        ..Benchmark1::default()
    };
    let (_, eval_states) = eval_gen.generate(seed ^ 0x65_76_61_6c);
    let conditioning: Vec<DVector<f64>> = eval_states[..t_eval]
        .iter()
        .map(|&x| DVector::from_element(1, x))
        .collect();
    let targets: Vec<DVector<f64>> = eval_states[1..=t_eval]
        .iter()
        .map(|&x| DVector::from_element(1, x))
        .collect();

    let retained = output.chains[0].retained(output.resolved.sampler.burn_in_fraction);
    let eval = evaluate_one_step(
        retained,
        &output.structure,
        &conditioning,
        &targets,
        &output.resolved,
        output.resolved.sampler.parallel,
        seed,
    )?;

    // Posterior transition profile over the domain, for plotting.
    let grid: Vec<DVector<f64>> = (0..=160)
        .map(|i| DVector::from_element(1, -4.0 + i as f64 * 0.05))
        .collect();
    let profile = transition_profile(retained, &output.structure, &grid)?;
    let profile_path = out_dir.join(PROFILE_FILE);
    let mut text = String::from("x,mean,std\n");
    for (x, (mean, std)) in grid.iter().zip(&profile) {
        text.push_str(&format!("{:?},{:?},{:?}\n", x[0], mean[0], std[0]));
    }
    fs::write(&profile_path, text).map_err(io_err(&profile_path))?;

    finish_bench(
        "benchmark1",
        &train,
        config,
        output,
        eval,
        out_dir,
        &[(
            "eval_targets".to_string(),
            "realized next states, measurement noise excluded".to_string(),
        )],
    )
}

/// Second synthetic benchmark: piecewise-linear dynamics, Matern kernel,
/// domain auto-sized from the data.
pub fn run_bench2(options: BenchOptions, out_dir: &Path) -> Result<BenchOutcome, RunError> {
    let BenchOptions {
        t_train,
        t_eval,
        seed,
        ..
    } = options;
    let mut config = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    config.model.kernel = Some("matern".to_string());
    config.model.matern_nu = Some(2.5);
    config.model.obs_noise = Some(serde_json::json!(1.0));
    config.priors.q_dof = Some(10.0);
    config.priors.q_scale = Some(1.0);
    options.apply(&mut config);

    let generator = Benchmark2 {
        t_len: t_train,
        ..Benchmark2::default()
    };
    let (train, _) = generator.generate(seed);
    if config.model.domain_half_widths.is_none() {
        // The piecewise-linear system keeps its states within about twice
        // the observed output range; a moderate box preserves eigenbasis
        // resolution where the data lives.
        config.model.domain_half_widths = Some(vec![16.0]);
    }
    let output = learn(&train, &config, out_dir)?;

    let eval_gen = Benchmark2 {
        t_len: t_eval,
        ..Benchmark2::default()
    };
    let (_, eval_states) = eval_gen.generate(seed ^ 0x65_76_61_6c);
    let conditioning: Vec<DVector<f64>> = eval_states[..t_eval]
        .iter()
        .map(|&x| DVector::from_element(1, x))
        .collect();
    let targets: Vec<DVector<f64>> = eval_states[1..=t_eval]
        .iter()
        .map(|&x| DVector::from_element(1, x))
        .collect();

    let retained = output.chains[0].retained(output.resolved.sampler.burn_in_fraction);
    let eval = evaluate_one_step(
        retained,
        &output.structure,
        &conditioning,
        &targets,
        &output.resolved,
        output.resolved.sampler.parallel,
        seed,
    )?;

    finish_bench(
        "benchmark2",
        &train,
        config,
        output,
        eval,
        out_dir,
        &[(
            "eval_targets".to_string(),
            "realized next states, measurement noise excluded".to_string(),
        )],
    )
}

fn finish_bench(
    name: &str,
    train: &Dataset,
    _config: ExperimentConfig,
    output: LearnOutput,
    eval: OneStepEvaluation,
    out_dir: &Path,
    notes: &[(String, String)],
) -> Result<BenchOutcome, RunError> {
    let data_path = out_dir.join(DATA_FILE);
    let file = fs::File::create(&data_path).map_err(io_err(&data_path))?;
    let mut w = BufWriter::new(file);
    train.write_csv(&mut w).map_err(io_err(&data_path))?;
    w.flush().map_err(io_err(&data_path))?;

    write_metrics(out_dir, &eval.metrics)?;
    write_predictive(out_dir, &eval.predictive)?;
    write_summary_row(out_dir, name, &eval.metrics, output.train_secs, eval.test_secs)?;

    let mut manifest = RunManifest::new(name, output.resolved.clone());
    for (k, v) in notes {
        manifest.notes.insert(k.clone(), v.clone());
    }
    manifest
        .notes
        .insert("protocol".to_string(), "one_step".to_string());
    manifest.diagnostics.insert(
        "chain_0".to_string(),
        diagnostics_json(&output.chains[0]),
    );
    manifest.diagnostics.insert(
        "train_secs".to_string(),
        serde_json::json!(output.train_secs),
    );
    write_manifest(out_dir, &manifest)?;
    Ok(BenchOutcome {
        metrics: eval.metrics,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Learn mode: CSV in, chain and manifest out.
pub fn run_learn_mode(
    data_path: &Path,
    config: ExperimentConfig,
    out_dir: &Path,
) -> Result<(), RunError> {
    let schema = CsvSchema::default();
    let dataset = load_csv(data_path, schema)?;
    let output = learn(&dataset, &config, out_dir)?;
    let mut manifest = RunManifest::new("learn", output.resolved.clone());
    manifest
        .notes
        .insert("data_path".to_string(), data_path.display().to_string());
    for (idx, chain) in output.chains.iter().enumerate() {
        manifest
            .diagnostics
            .insert(format!("chain_{idx}"), diagnostics_json(chain));
    }
    write_manifest(out_dir, &manifest)?;
    Ok(())
}

fn load_run(run_dir: &Path) -> Result<(RunManifest, ModelStructure, Vec<GibbsRecord>), RunError> {
    let manifest = RunManifest::from_file(&run_dir.join(MANIFEST_FILE))?;
    let structure = manifest.config.to_structure()?;
    let chain_path = run_dir.join(CHAIN_FILE);
    let chain_path = if chain_path.exists() {
        chain_path
    } else {
        run_dir.join("chain_00").join(CHAIN_FILE)
    };
    let file = fs::File::open(&chain_path).map_err(io_err(&chain_path))?;
    let (_, records) = read_chain(BufReader::new(file))?;
    Ok((manifest, structure, records))
}

/// Eval mode: score an existing chain against a CSV, no sampling.
pub fn run_eval_mode(
    run_dir: &Path,
    data_path: &Path,
    out_dir: &Path,
) -> Result<MetricsReport, RunError> {
    let (manifest, structure, records) = load_run(run_dir)?;
    let dataset = load_csv(data_path, CsvSchema::default())?;
    let resolved = manifest.config.clone();
    let burn = resolved.burn_in().min(records.len().saturating_sub(1));
    let retained = &records[burn..];

    // With an identity-style measurement the observations stand in for the
    // conditioning states.
    let conditioning: Vec<DVector<f64>> =
        dataset.observations[..dataset.len() - 1].to_vec();
    let targets: Vec<DVector<f64>> = dataset.observations[1..].to_vec();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let eval = evaluate_one_step(
        retained,
        &structure,
        &conditioning,
        &targets,
        &resolved,
        resolved.sampler.parallel,
        resolved.seed,
    )?;
    write_metrics(out_dir, &eval.metrics)?;
    write_predictive(out_dir, &eval.predictive)?;
    Ok(eval.metrics)
}

/// Forecast mode: filter over the CSV history, predict `horizon` steps.
pub fn run_forecast_mode(
    run_dir: &Path,
    data_path: &Path,
    horizon: usize,
    filter_particles: usize,
    out_dir: &Path,
) -> Result<(), RunError> {
    let (manifest, structure, records) = load_run(run_dir)?;
    let dataset = load_csv(data_path, CsvSchema::default())?;
    let resolved = &manifest.config;
    let burn = resolved.burn_in().min(records.len().saturating_sub(1));
    let retained = &records[burn..];
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed ^ 0x666f_7265);
    let predictive = forecast_k_step(
        retained,
        &structure,
        &dataset.observations,
        dataset.inputs.as_deref(),
        None,
        horizon,
        filter_particles,
        resolved.sampler.parallel,
        &mut rng,
    )?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_predictive(out_dir, &predictive)?;
    Ok(())
}
