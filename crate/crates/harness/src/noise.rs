use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tomoprior::Sinogram;

use crate::error::{invalid, Result};

/// Adds iid Gaussian noise with standard deviation `fraction` times the mean
/// of the clean sinogram.
pub fn add_measurement_noise(sino: &Sinogram, fraction: f64, seed: u64) -> Result<Sinogram> {
    if !(fraction.is_finite() && fraction >= 0.0) {
        return invalid("noise fraction must be finite and nonnegative");
    }
    let data = sino.data();
    let sigma = fraction * data.iter().sum::<f64>() / data.len() as f64;
    if sigma == 0.0 {
        return Ok(sino.clone());
    }
    let normal = Normal::new(0.0, sigma.abs()).map_err(|e| crate::HarnessError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sino.with_data(data.iter().map(|v| v + normal.sample(&mut rng)).collect())?)
}

/// Independent seed for a named stochastic step of one experiment.
pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}
