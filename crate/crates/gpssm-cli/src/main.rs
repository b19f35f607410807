use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpssm_cli::config::ExperimentConfig;
use gpssm_cli::run;

#[derive(Parser)]
#[command(
    name = "gpssm",
    about = "Bayesian learning, evaluation, and forecasting for nonlinear state space models with Gaussian process transition priors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct BenchOverrides {
    /// Domain half-width override.
    #[arg(long)]
    domain: Option<f64>,
    /// Eigenfunction count override.
    #[arg(long)]
    features: Option<usize>,
    /// Iteration count override.
    #[arg(long)]
    iterations: Option<usize>,
    /// Particle count override.
    #[arg(long)]
    particles: Option<usize>,
}

impl BenchOverrides {
    fn options(&self, t_train: usize, t_eval: usize, seed: u64) -> run::BenchOptions {
        let mut options = run::BenchOptions::new(t_train, t_eval, seed);
        options.domain_half_width = self.domain;
        options.features = self.features;
        options.iterations = self.iterations;
        options.particles = self.particles;
        options
    }
}

#[derive(Args, Clone)]
struct CommonLearnArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the run artifacts.
    #[arg(long, default_value = "run_out")]
    out: PathBuf,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Gibbs iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Particle count of the conditional filter.
    #[arg(long)]
    particles: Option<usize>,
    /// Eigenfunctions per state dimension.
    #[arg(long)]
    features: Option<usize>,
    /// Domain half-widths, comma separated; omit for auto sizing.
    #[arg(long, value_delimiter = ',')]
    domain: Option<Vec<f64>>,
    /// Kernel family: squared_exponential (se) or matern.
    #[arg(long)]
    kernel: Option<String>,
    /// Matern smoothness.
    #[arg(long)]
    nu: Option<f64>,
    /// State dimension.
    #[arg(long)]
    state_dim: Option<usize>,
    /// Observation noise variance (isotropic).
    #[arg(long)]
    obs_noise: Option<f64>,
    /// Independent chains run concurrently with derived seeds.
    #[arg(long)]
    chains: Option<usize>,
    /// Metropolis-Hastings proposal scale on log hyperparameters.
    #[arg(long)]
    mh_scale: Option<f64>,
    /// Burn-in fraction discarded before evaluation.
    #[arg(long)]
    burn_in: Option<f64>,
    /// Eigenfunctions per input dimension (0 disables the input basis).
    #[arg(long)]
    input_features: Option<usize>,
    /// Disable the data-parallel inner loops.
    #[arg(long)]
    sequential: bool,
}

impl CommonLearnArgs {
    fn into_config(self) -> Result<ExperimentConfig, gpssm_cli::config::ConfigError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(iterations) = self.iterations {
            config.sampler.iterations = iterations;
        }
        if let Some(particles) = self.particles {
            config.sampler.particles = particles;
        }
        if let Some(features) = self.features {
            config.model.features_per_dim = features;
        }
        if let Some(domain) = self.domain {
            config.model.domain_half_widths = Some(domain);
        }
        if let Some(kernel) = self.kernel {
            config.model.kernel = Some(kernel);
        }
        if let Some(nu) = self.nu {
            config.model.matern_nu = Some(nu);
        }
        if let Some(state_dim) = self.state_dim {
            config.model.state_dim = state_dim;
        }
        if let Some(obs_noise) = self.obs_noise {
            config.model.obs_noise = Some(serde_json::json!(obs_noise));
        }
        if let Some(chains) = self.chains {
            config.chains = chains;
        }
        if let Some(mh_scale) = self.mh_scale {
            config.sampler.mh_proposal_scale = mh_scale;
        }
        if let Some(burn_in) = self.burn_in {
            config.sampler.burn_in_fraction = burn_in;
        }
        if let Some(input_features) = self.input_features {
            config.model.input_features_per_dim = input_features;
        }
        if self.sequential {
            config.sampler.parallel = false;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn a model from a CSV file (columns t, u*, y*).
    Learn {
        /// Training data CSV.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: CommonLearnArgs,
    },
    /// Run the saturating-dynamics synthetic benchmark.
    Bench1 {
        #[arg(long, default_value = "run_bench1")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training length.
        #[arg(long, default_value_t = 500)]
        t_train: usize,
        /// Evaluation length.
        #[arg(long, default_value_t = 10_000)]
        t_eval: usize,
        /// Repeat with seeds seed..seed+runs, one run directory each.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[command(flatten)]
        bench: BenchOverrides,
    },
    /// Run the piecewise-linear synthetic benchmark.
    Bench2 {
        #[arg(long, default_value = "run_bench2")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        t_train: usize,
        #[arg(long, default_value_t = 100_000)]
        t_eval: usize,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[command(flatten)]
        bench: BenchOverrides,
    },
    /// Score an existing run against a CSV (no sampling).
    Eval {
        /// Directory of a previous learn/bench run.
        #[arg(long)]
        run: PathBuf,
        /// Evaluation data CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "run_eval")]
        out: PathBuf,
    },
    /// Filter over a CSV history and predict ahead.
    Forecast {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Steps ahead.
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        /// Particles in the forecasting filter.
        #[arg(long, default_value_t = 1000)]
        particles: usize,
        #[arg(long, default_value = "run_forecast")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = err.source();
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Learn { data, common } => {
            let out = common.out.clone();
            let config = common.into_config()?;
            run::run_learn_mode(&data, config, &out)?;
            println!("learned chain written to {}", out.display());
        }
        Command::Bench1 {
            out,
            seed,
            t_train,
            t_eval,
            runs,
            bench,
        } => {
            for k in 0..runs {
                let dir = if runs == 1 {
                    out.clone()
                } else {
                    out.join(format!("seed_{:02}", seed + k as u64))
                };
                let outcome =
                    run::run_bench1(bench.options(t_train, t_eval, seed + k as u64), &dir)?;
                println!(
                    "benchmark1 seed {}: rmse {:.4}, ll {:.4} -> {}",
                    seed + k as u64,
                    outcome.metrics.rmse,
                    outcome.metrics.ll,
                    dir.display()
                );
            }
        }
        Command::Bench2 {
            out,
            seed,
            t_train,
            t_eval,
            runs,
            bench,
        } => {
            for k in 0..runs {
                let dir = if runs == 1 {
                    out.clone()
                } else {
                    out.join(format!("seed_{:02}", seed + k as u64))
                };
                let outcome =
                    run::run_bench2(bench.options(t_train, t_eval, seed + k as u64), &dir)?;
                println!(
                    "benchmark2 seed {}: rmse {:.4}, ll {:.4} -> {}",
                    seed + k as u64,
                    outcome.metrics.rmse,
                    outcome.metrics.ll,
                    dir.display()
                );
            }
        }
        Command::Eval { run, data, out } => {
            let metrics = run::run_eval_mode(&run, &data, &out)?;
            println!(
                "eval: rmse {:.4}, ll {:.4} -> {}",
                metrics.rmse,
                metrics.ll,
                out.display()
            );
        }
        Command::Forecast {
            run,
            data,
            horizon,
            particles,
            out,
        } => {
            run::run_forecast_mode(&run, &data, horizon, particles, &out)?;
            println!("forecast written to {}", out.display());
        }
    }
    Ok(())
}
