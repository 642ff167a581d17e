//! Trace simulation, periodic-orbit detection, basin rasterization and
//! parameter sweeps.

mod cycle;
mod raster;
mod simulate;
mod sweep;

pub use cycle::{brent_period, detect_cycle, DEFAULT_MATCH_TOL, DEFAULT_WINDOW};
pub use raster::{rasterize, Bounds, CellResult, RasterGrid};
pub use simulate::{
    certified_step_bound, convergence_radius, enumerate_traces, simulate, simulate_with,
    BranchPolicy, SimOptions, Trace, Verdict, CONVERGENCE_SAFETY,
};
pub use sweep::{sweep, sweep_sample, SweepCell, SweepGrid, ThetaGrid, SWEEP_BOX};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec2;

/// Independent seed for work item `index`, derived from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Uniform point in `[-half, half]^2` drawn from `seed`.
pub fn random_point(seed: u64, half: f64) -> Vec2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vec2::new(
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
    )
}
