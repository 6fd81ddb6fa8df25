//! Fixtures shared by the benchmarks.

use feel_sched::harness::ExperimentConfig;
use feel_sched::{LearningTask, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

/// Random multiplier problem with `devices` entries: `(rho, importance, upload times)`.
pub fn ctm_instance(devices: usize, seed: u64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..devices).map(|_| rng.random_range(0.01..1.0)).collect();
    let b = (0..devices).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
    (5.0, a, b)
}

/// The shipped experiment, ready to simulate.
pub fn default_experiment() -> (ExperimentConfig, SimConfig, LearningTask) {
    let cfg = ExperimentConfig::from_toml_str(DEFAULT_CONFIG).expect("shipped config parses");
    let sim = cfg.sim_config().expect("shipped config is valid");
    let task = cfg.build_task().expect("shipped task builds");
    (cfg, sim, task)
}
