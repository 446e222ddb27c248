//! Counter-based per-trajectory random streams.
//!
//! Every trajectory owns stream `index` of a ChaCha8 generator keyed by the
//! master seed, so results are independent of thread count and of which
//! other trajectories ran. Calibration sub-ensembles reuse the low-index
//! streams of the full ensemble, which makes their estimates strongly
//! correlated with the confirmation run (common random numbers).

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn trajectory_rng(master_seed: u64, trajectory_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trajectory_index);
    rng
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Complex Gaussian with E[z* z] = 1/2 and E[z z] = 0 (half a quantum per
/// quadrature), the Wigner vacuum spread.
pub fn vacuum_noise(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(0.5 * standard_normal(rng), 0.5 * standard_normal(rng))
}

/// Complex Gaussian with E[z* z] = 1 and E[z z] = 0.
pub fn unit_complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(
        INV_SQRT2 * standard_normal(rng),
        INV_SQRT2 * standard_normal(rng),
    )
}
