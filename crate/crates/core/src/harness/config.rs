//! Experiment configuration (TOML). Power and noise are given in dBm here
//! and converted to watts before anything reaches the core modules.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CommParams, DeviceProfile};
use crate::error::{Error, Result};
use crate::learning::{self, LearningTask, StepSchedule};
use crate::scheduler::{PolicyKind, DEFAULT_ICA_BETA};
use crate::simulator::SimConfig;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Noise power over `bandwidth_hz` for a density given in dBm/Hz.
pub fn noise_power_watts(density_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_watts(density_dbm_per_hz + 10.0 * bandwidth_hz.log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Snapshot times as fractions of the longest typical run, i.e. the
    /// largest per-policy median of total simulated time.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    /// Absolute snapshot times in seconds; replaces `checkpoints` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_times_s: Option<Vec<f64>>,
}

fn default_checkpoints() -> Vec<f64> {
    vec![0.3, 0.7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub epsilon: f64,
    pub max_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    pub bandwidth_hz: f64,
    pub noise_density_dbm_per_hz: f64,
    pub bits_per_param: u32,
    pub num_params: u64,
    pub gain_threshold: f64,
    #[serde(default)]
    pub broadcast_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub dataset_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_variance: Option<f64>,
    pub transmit_power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub dim: usize,
    /// Spread of the device optima (quadratic task).
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity: f64,
    /// Label-prior skew across devices in `[0, 1]` (logistic task).
    #[serde(default)]
    pub label_skew: f64,
    #[serde(default = "default_l2_reg")]
    pub l2_reg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Seed for the task data; shared by every run.
    #[serde(default)]
    pub seed: u64,
}

fn default_heterogeneity() -> f64 {
    1.0
}

fn default_l2_reg() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub chi: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "default_ica_beta")]
    pub ica_beta: f64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            ica_beta: DEFAULT_ICA_BETA,
        }
    }
}

fn default_ica_beta() -> f64 {
    DEFAULT_ICA_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub simulation: SimulationSection,
    pub comm: CommSection,
    pub devices: Vec<DeviceSection>,
    pub task: TaskSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
}

fn invalid(field: impl AsRef<str>, reason: impl AsRef<str>) -> Error {
    Error::Config(format!("{}: {}", field.as_ref(), reason.as_ref()))
}

/// Re-labels a core validation error with the config path it came from.
fn field_error(prefix: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        Error::InvalidDistance(d) => invalid(format!("{prefix}.distance_km"), format!("must be > 0, got {d}")),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.policies.is_empty() {
            return Err(invalid("experiment.policies", "at least one policy is required"));
        }
        if e.seeds.is_empty() {
            return Err(invalid("experiment.seeds", "at least one seed is required"));
        }
        if let Some(c) = e.checkpoints.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(invalid("experiment.checkpoints", format!("fractions must lie in (0, 1], got {c}")));
        }
        if let Some(times) = &e.checkpoint_times_s {
            if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
                return Err(invalid("experiment.checkpoint_times_s", format!("times must be finite and nonnegative, got {t}")));
            }
        }
        if self.devices.is_empty() {
            return Err(invalid("devices", "at least one device is required"));
        }
        for (i, d) in self.devices.iter().enumerate() {
            match (d.distance_km, d.channel_variance) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(invalid(
                        format!("devices[{i}]"),
                        "exactly one of distance_km and channel_variance must be set",
                    ))
                }
            }
            if !d.transmit_power_dbm.is_finite() {
                return Err(invalid(format!("devices[{i}].transmit_power_dbm"), "must be finite"));
            }
        }
        if !self.comm.noise_density_dbm_per_hz.is_finite() {
            return Err(invalid("comm.noise_density_dbm_per_hz", "must be finite"));
        }
        let t = &self.task;
        if t.dim < 1 {
            return Err(invalid("task.dim", "must be >= 1"));
        }
        if !(t.heterogeneity >= 0.0 && t.heterogeneity.is_finite()) {
            return Err(invalid("task.heterogeneity", "must be >= 0"));
        }
        if t.kind == TaskKind::Logistic {
            if !(t.l2_reg > 0.0) {
                return Err(invalid("task.l2_reg", "must be > 0"));
            }
            if !(0.0..=1.0).contains(&t.label_skew) {
                return Err(invalid("task.label_skew", "must lie in [0, 1]"));
            }
        }
        if let Some(b) = t.batch_size {
            if let Some(d) = self.devices.iter().find(|d| b == 0 || b > d.dataset_size) {
                return Err(invalid(
                    "task.batch_size",
                    format!("must lie in 1..={} (smallest device dataset)", d.dataset_size.min(b.max(1))),
                ));
            }
        }
        self.sim_config()?;
        Ok(())
    }

    pub fn comm_params(&self) -> Result<CommParams> {
        let c = &self.comm;
        if !(c.bandwidth_hz > 0.0 && c.bandwidth_hz.is_finite()) {
            return Err(invalid("comm.bandwidth_hz", format!("must be > 0, got {}", c.bandwidth_hz)));
        }
        CommParams::new(
            c.bandwidth_hz,
            c.bits_per_param,
            c.num_params,
            noise_power_watts(c.noise_density_dbm_per_hz, c.bandwidth_hz),
            c.gain_threshold,
            c.broadcast_time_s,
        )
        .map_err(|e| field_error("comm", e))
    }

    pub fn device_profiles(&self) -> Result<Vec<DeviceProfile>> {
        self.devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let power = dbm_to_watts(d.transmit_power_dbm);
                let prefix = format!("devices[{i}]");
                match (d.distance_km, d.channel_variance) {
                    (Some(km), _) => DeviceProfile::at_distance(d.dataset_size, km, power),
                    (None, Some(v)) => DeviceProfile::new(d.dataset_size, v, power),
                    (None, None) => Err(Error::param("channel_variance", "missing")),
                }
                .map_err(|e| field_error(&prefix, e))
            })
            .collect()
    }

    pub fn step_schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.schedule.chi, self.schedule.nu).map_err(|e| field_error("schedule", e))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            devices: self.device_profiles()?,
            comm: self.comm_params()?,
            schedule: self.step_schedule()?,
            epsilon: self.simulation.epsilon,
            max_rounds: self.simulation.max_rounds,
            batch_size: self.task.batch_size,
            ica_beta: self.scheduler.ica_beta,
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter { field: f @ ("epsilon" | "max_rounds"), reason } => {
                invalid(format!("simulation.{f}"), reason)
            }
            Error::InvalidParameter { field: "ica_beta", reason } => invalid("scheduler.ica_beta", reason),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn build_task(&self) -> Result<LearningTask> {
        let sizes: Vec<usize> = self.devices.iter().map(|d| d.dataset_size).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.task.seed);
        let t = &self.task;
        match t.kind {
            TaskKind::Quadratic => learning::make_quadratic_task(t.dim, &sizes, t.heterogeneity, &mut rng),
            TaskKind::Logistic => learning::make_logistic_task(t.dim, &sizes, t.label_skew, t.l2_reg, &mut rng),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
