//! Shared fixtures for the criterion benches: representative operating
//! points at desk scale so throughput numbers track the real sweeps.

use squeezelab_core::ModelParams;

pub const BENCH_SEED: u64 = 0xb13d;

/// Desk-scale ensemble, small enough that one criterion sample finishes in
/// a few hundred milliseconds.
pub fn desk_params(n_trajectories: usize) -> ModelParams {
    ModelParams::new(1.0e4, 2.0)
        .expect("static params")
        .with_seed(BENCH_SEED)
        .with_trajectories(n_trajectories)
}

/// Few-hundred-atom ensemble used by the optimizer tests.
pub fn small_params(n_trajectories: usize) -> ModelParams {
    ModelParams::new(400.0, 1.5)
        .expect("static params")
        .with_seed(BENCH_SEED)
        .with_trajectories(n_trajectories)
}
