//! The federated round loop with simulated communication time.
//!
//! One round: broadcast (clock += T_B), every device computes its local
//! gradient at the broadcast model, the policy produces a distribution, one
//! device is drawn and uploads its scaled gradient (clock += its upload
//! time), and the server takes an SGD step.
//!
//! Randomness comes from three ChaCha streams under one seed (channel,
//! mini-batch, device draw). Each consumes a fixed amount per round, so two
//! policies run with the same seed see the same channel sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, CommParams, DeviceProfile};
use crate::error::{Error, Result};
use crate::learning::{apply_update, scaled_upload, LearningTask, StepSchedule, Vector};
use crate::scheduler::{self, BoundParams, PolicyKind, RoundInputs};

const CHANNEL_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const DEVICE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub devices: Vec<DeviceProfile>,
    pub comm: CommParams,
    pub schedule: StepSchedule,
    pub epsilon: f64,
    pub max_rounds: u64,
    /// Local mini-batch size; `None` means each device's full dataset.
    pub batch_size: Option<usize>,
    pub ica_beta: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::param("devices", "at least one device is required"));
        }
        for d in &self.devices {
            d.validate()?;
        }
        self.comm.validate()?;
        self.schedule.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if self.max_rounds == 0 {
            return Err(Error::param("max_rounds", "must be >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.ica_beta >= 0.0) {
            return Err(Error::param("ica_beta", format!("must be >= 0, got {}", self.ica_beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u64,
    pub policy: PolicyKind,
    pub device: usize,
    pub eta: f64,
    pub upload_s: f64,
    /// Broadcast plus upload time of this round.
    pub round_s: f64,
    pub cum_s: f64,
    /// Global loss after this round's update.
    pub loss: f64,
    pub gap: f64,
    pub grad_norms: Vec<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    /// Remaining-rounds bound evaluated at the chosen distribution.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxRounds,
    /// The policy had nothing left to schedule.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub seed: u64,
    pub status: RunStatus,
    pub rounds: u64,
    pub total_time_s: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
    #[serde(skip)]
    pub logs: Vec<RoundLog>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    /// Simulated time at which the accuracy target was met.
    pub fn time_to_target(&self) -> Option<f64> {
        self.converged().then_some(self.total_time_s)
    }

    /// Loss gap in force at simulated time `at`: the last round finished by
    /// then, or the initial gap if none was.
    pub fn gap_at(&self, at: f64) -> f64 {
        let idx = self.logs.partition_point(|l| l.cum_s <= at);
        if idx == 0 {
            self.initial_gap
        } else {
            self.logs[idx - 1].gap
        }
    }
}

/// Per-run mutable state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub model: Vector,
    pub round: u64,
    pub clock_s: f64,
    /// Running maximum of the aggregate gradient norm.
    pub max_grad_norm: f64,
    channel_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    device_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone)]
pub enum RoundOutcome {
    Completed(RoundLog),
    Stalled(String),
}

pub fn check_convergence(task: &LearningTask, w: &Vector, epsilon: f64) -> bool {
    task.gap(w).abs() <= epsilon
}

pub struct Simulation<'a> {
    task: &'a LearningTask,
    config: &'a SimConfig,
    bound: BoundParams,
    future_time: Option<f64>,
}

impl<'a> Simulation<'a> {
    pub fn new(task: &'a LearningTask, config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        if task.sizes() != config.devices.iter().map(|d| d.dataset_size).collect::<Vec<_>>() {
            return Err(Error::param("devices", "dataset sizes differ from the learning task's partition"));
        }
        let bound = BoundParams::new(
            task.smoothness(),
            task.strong_convexity(),
            config.epsilon,
            config.schedule,
            0,
        )?;
        let future_time = if config.comm.gain_threshold > 0.0 {
            Some(channel::expected_future_time(&config.devices, &config.comm)?)
        } else {
            None
        };
        Ok(Self {
            task,
            config,
            bound,
            future_time,
        })
    }

    pub fn future_time(&self) -> Option<f64> {
        self.future_time
    }

    pub fn start(&self, seed: u64) -> SimState {
        SimState {
            model: Vector::zeros(self.task.dim()),
            round: 0,
            clock_s: 0.0,
            max_grad_norm: 0.0,
            channel_rng: stream(seed, CHANNEL_STREAM),
            batch_rng: stream(seed, BATCH_STREAM),
            device_rng: stream(seed, DEVICE_STREAM),
        }
    }

    pub fn run_round(&self, state: &mut SimState, policy: PolicyKind) -> Result<RoundOutcome> {
        let cfg = self.config;
        let t = state.round;
        let broadcast = cfg.comm.broadcast_time_s;

        let grads = self.task.gradient_set(&state.model, cfg.batch_size, &mut state.batch_rng)?;
        let realization = channel::sample_channels(&cfg.devices, &cfg.comm, &mut state.channel_rng);
        let bound = self.bound.at_round(t);
        let future_time = match (policy, self.future_time) {
            (PolicyKind::Ctm, None) => return Err(Error::Threshold(cfg.comm.gain_threshold)),
            (_, ft) => ft.unwrap_or(0.0),
        };
        let inputs = RoundInputs {
            grads: &grads,
            channel: &realization,
            comm: &cfg.comm,
            bound: &bound,
            future_time,
            ica_beta: cfg.ica_beta,
        };
        let decision = match scheduler::decide(policy, &inputs) {
            Ok(d) => d,
            Err(Error::Starvation(why)) => return Ok(RoundOutcome::Stalled(why)),
            Err(e) => return Err(e),
        };

        let device = scheduler::sample_device(&decision.distribution, &mut state.device_rng);
        let upload_s = realization.links[device].upload_s;
        let round_s = broadcast + upload_s;

        let n = self.task.total_size();
        let p = decision.distribution.probs()[device];
        let update = scaled_upload(&grads.grads[device], self.task.sizes()[device], n, p, device)?;
        state.model = apply_update(&state.model, t, &cfg.schedule, &update);
        state.max_grad_norm = state.max_grad_norm.max(grads.aggregate().norm());
        state.clock_s += round_s;
        state.round += 1;

        let (rho, lambda, rounds_bound) = match &decision.ctm {
            Some(sol) => {
                let rb = scheduler::remaining_rounds_bound(&grads, &decision.distribution, &bound, state.max_grad_norm)?;
                (Some(sol.rho), Some(sol.lambda), Some(rb.total()))
            }
            None => (None, None, None),
        };

        let loss = self.task.loss(&state.model);
        Ok(RoundOutcome::Completed(RoundLog {
            round: t,
            policy,
            device,
            eta: cfg.schedule.eta(t),
            upload_s,
            round_s,
            cum_s: state.clock_s,
            loss,
            gap: loss - self.task.optimal_loss(),
            grad_norms: grads.norms,
            rho,
            lambda,
            bound: rounds_bound,
        }))
    }

    /// Runs rounds until the accuracy target, `max_rounds`, or a stall.
    pub fn run(&self, policy: PolicyKind, seed: u64) -> Result<RunResult> {
        let mut state = self.start(seed);
        let initial_gap = self.task.gap(&state.model);
        let mut logs = Vec::new();
        let mut status = if initial_gap.abs() <= self.config.epsilon {
            RunStatus::Converged
        } else {
            RunStatus::MaxRounds
        };

        while status != RunStatus::Converged && state.round < self.config.max_rounds {
            match self.run_round(&mut state, policy)? {
                RoundOutcome::Completed(log) => {
                    let done = log.gap.abs() <= self.config.epsilon;
                    logs.push(log);
                    if done {
                        status = RunStatus::Converged;
                    }
                }
                RoundOutcome::Stalled(_) => {
                    status = if check_convergence(self.task, &state.model, self.config.epsilon) {
                        RunStatus::Converged
                    } else {
                        RunStatus::Stalled
                    };
                    break;
                }
            }
        }

        Ok(RunResult {
            policy,
            seed,
            status,
            rounds: state.round,
            total_time_s: state.clock_s,
            initial_gap,
            final_gap: logs.last().map_or(initial_gap, |l| l.gap),
            logs,
        })
    }
}

/// One run of `policy` under `seed`.
pub fn run_experiment(task: &LearningTask, config: &SimConfig, policy: PolicyKind, seed: u64) -> Result<RunResult> {
    Simulation::new(task, config)?.run(policy, seed)
}
