//! Ground-truth generators for the two synthetic benchmark systems.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;

/// Saturating first benchmark system:
/// `x_{t+1} = tanh(2 x_t) + w`, `y_t = x_t + e`,
/// `w ~ N(0, 0.1)`, `e ~ N(0, 0.1)`.
#[derive(Debug, Clone, Copy)]
pub struct Benchmark1 {
    pub t_len: usize,
    pub x1: f64,
    pub process_var: f64,
    pub obs_var: f64,
}

impl Default for Benchmark1 {
    fn default() -> Self {
        Self {
            t_len: 500,
            x1: 0.0,
            process_var: 0.1,
            obs_var: 0.1,
        }
    }
}

impl Benchmark1 {
    pub fn transition(x: f64) -> f64 {
        (2.0 * x).tanh()
    }

    pub fn generate(&self, seed: u64) -> (Dataset, Vec<f64>) {
        generate_scalar(self.t_len, self.x1, self.process_var, self.obs_var, seed, Self::transition)
    }
}

/// Piecewise-linear second benchmark system:
/// `x_{t+1} = x_t + 1 + w` when `x_t < 4`, else `-4 x_t + 21 + w`;
/// `y_t = x_t + e`, `w, e ~ N(0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct Benchmark2 {
    pub t_len: usize,
    pub x1: f64,
    pub process_var: f64,
    pub obs_var: f64,
}

impl Default for Benchmark2 {
    fn default() -> Self {
        Self {
            t_len: 500,
            x1: 0.0,
            process_var: 1.0,
            obs_var: 1.0,
        }
    }
}

impl Benchmark2 {
    pub fn transition(x: f64) -> f64 {
        if x < 4.0 {
            x + 1.0
        } else {
            -4.0 * x + 21.0
        }
    }

    pub fn generate(&self, seed: u64) -> (Dataset, Vec<f64>) {
        generate_scalar(self.t_len, self.x1, self.process_var, self.obs_var, seed, Self::transition)
    }
}

/// Simulates `x_{t+1} = f(x_t) + w`, `y_t = x_t + e`. Per step the process
/// noise is drawn before the measurement noise, so realizations are a pure
/// function of the seed. Returns `t_len` observations along with the full
/// state sequence (one element longer, so every observation time also has
/// its successor state available).
fn generate_scalar(
    t_len: usize,
    x1: f64,
    process_var: f64,
    obs_var: f64,
    seed: u64,
    transition: fn(f64) -> f64,
) -> (Dataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    };
    let (q_std, r_std) = (process_var.sqrt(), obs_var.sqrt());
    let mut states = Vec::with_capacity(t_len + 1);
    let mut observations = Vec::with_capacity(t_len);
    let mut x = x1;
    for _ in 0..t_len {
        states.push(x);
        let next = transition(x) + q_std * normal();
        observations.push(DVector::from_element(1, x + r_std * normal()));
        x = next;
    }
    states.push(x);
    let dataset = Dataset {
        time: Some((1..=t_len).map(|t| t as f64).collect()),
        inputs: None,
        observations,
        input_names: Vec::new(),
        output_names: vec!["y".to_string()],
        ignored_columns: Vec::new(),
    };
    (dataset, states)
}
