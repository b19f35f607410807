//! Sample statistics and Monte Carlo error estimates.

/// Sample mean and unbiased variance.
pub fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of the mean of `n` independent draws.
pub fn standard_error_of_mean(var: f64, n: usize) -> f64 {
    (var / n as f64).sqrt()
}

/// Standard error of the mean of a correlated (MCMC) sequence, by the
/// method of batch means with `sqrt(n)`-sized batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let b = (n as f64).sqrt().floor() as usize;
    let n_batches = n / b;
    assert!(n_batches >= 2, "need at least two batches");
    let means: Vec<f64> = (0..n_batches)
        .map(|i| xs[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let (_, var_b) = mean_and_var(&means);
    (var_b / n_batches as f64).sqrt()
}

/// Batch-means standard error for the sequence of squared deviations,
/// i.e. a Monte Carlo error estimate for an MCMC variance estimate.
pub fn batch_means_se_of_variance(xs: &[f64]) -> f64 {
    let (mean, _) = mean_and_var(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    batch_means_se(&sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_var_of_known_sample() {
        let (m, v) = mean_and_var(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-14);
        assert!((v - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn batch_means_se_shrinks_with_sample_size() {
        // Deterministic pseudo-random walk-free sequence.
        let xs: Vec<f64> = (0..10_000)
            .map(|i| ((i as f64 * 12.9898).sin() * 43_758.547).fract())
            .collect();
        let se_small = batch_means_se(&xs[..1_000]);
        let se_large = batch_means_se(&xs);
        assert!(se_large < se_small);
    }
}
