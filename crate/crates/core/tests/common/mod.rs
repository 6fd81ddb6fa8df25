#![allow(dead_code)]

use std::path::PathBuf;

use feel_sched::harness::{load_config, ExperimentConfig};
use feel_sched::{CommParams, DeviceProfile};

pub fn default_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

pub fn default_config() -> ExperimentConfig {
    load_config(&default_config_path()).expect("shipped config loads")
}

pub fn default_setup() -> (Vec<DeviceProfile>, CommParams) {
    let cfg = default_config();
    (cfg.device_profiles().unwrap(), cfg.comm_params().unwrap())
}

/// Running mean and standard error.
#[derive(Debug, Default, Clone, Copy)]
pub struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }

    pub fn std_err(&self) -> f64 {
        let m = self.mean();
        ((self.sum_sq / self.n - m * m).max(0.0) * self.n / (self.n - 1.0) / self.n).sqrt()
    }

    /// Within `k` standard errors, with a rounding allowance for samples
    /// that are all equal.
    pub fn agrees(&self, value: f64, k: f64) -> bool {
        (self.mean() - value).abs() <= k * self.std_err() + 1e-12 * value.abs().max(1.0)
    }
}

/// Minimum of `f` over interior points of the simplex grid with spacing `1/steps`.
pub fn grid_min_3(steps: usize, f: impl Fn([f64; 3]) -> f64) -> f64 {
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    for i in 1..steps {
        for j in 1..steps - i {
            let k = steps - i - j;
            best = best.min(f([i as f64 * h, j as f64 * h, k as f64 * h]));
        }
    }
    best
}

/// Central-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
