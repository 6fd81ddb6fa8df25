//! Brute-force reference computations.
//!
//! These deliberately avoid the production code paths: simplex grid search
//! instead of the multiplier solve, Monte Carlo instead of quadrature, and
//! central differences instead of analytic gradients. They back the test
//! suites and the `oracle` subcommand of the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::channel::{self, CommParams, DeviceProfile};
use crate::error::{Error, Result};
use crate::learning::{self, GradientSet, LearningTask, StepSchedule, Vector};
use crate::scheduler::{self, BoundParams, PolicyKind, SchedulingDistribution};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

const ROUNDING: f64 = 1e-12;

impl Estimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let n_f = n as f64;
        let mean = sum / n_f;
        let var = ((sum_sq - n_f * mean * mean) / (n_f - 1.0)).max(0.0);
        Self {
            mean,
            std_err: (var / n_f).sqrt(),
        }
    }

    /// Whether `value` lies within `k` standard errors, plus a rounding
    /// allowance so zero-variance estimates (point masses) can agree.
    pub fn agrees(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_err + ROUNDING * value.abs().max(1.0)
    }
}

/// Minimum of `objective` over the simplex grid `{k/steps}` in `dim`
/// coordinates, skipping points with a zero coordinate.
pub fn simplex_grid_min<F: FnMut(&[f64]) -> f64>(dim: usize, steps: usize, mut objective: F) -> (f64, Vec<f64>) {
    fn recurse<F: FnMut(&[f64]) -> f64>(
        point: &mut Vec<f64>,
        remaining: usize,
        dim: usize,
        steps: usize,
        objective: &mut F,
        best: &mut (f64, Vec<f64>),
    ) {
        if point.len() + 1 == dim {
            if remaining == 0 {
                return;
            }
            point.push(remaining as f64 / steps as f64);
            let v = objective(point);
            if v < best.0 {
                *best = (v, point.clone());
            }
            point.pop();
            return;
        }
        for k in 1..remaining {
            point.push(k as f64 / steps as f64);
            recurse(point, remaining - k, dim, steps, objective, best);
            point.pop();
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    if dim == 1 {
        let v = objective(&[1.0]);
        return (v, vec![1.0]);
    }
    recurse(&mut Vec::with_capacity(dim), steps, dim, steps, &mut objective, &mut best);
    best
}

/// Look-ahead objective written out directly from its definition.
pub fn direct_objective(weight: f64, importance: &[f64], upload_times: &[f64], probs: &[f64]) -> f64 {
    let mut total = 0.0;
    for m in 0..probs.len() {
        total += weight * importance[m] * importance[m] / probs[m] + probs[m] * upload_times[m];
    }
    total
}

/// Monte Carlo estimate of the truncated expected reciprocal rate:
/// `z ~ Exp(mean sigma^2)`, averaging `1{z >= g_th sigma^2} / log2(1 + P z / N0)`.
pub fn mc_q_factor<R: Rng + ?Sized>(profile: &DeviceProfile, comm: &CommParams, samples: usize, rng: &mut R) -> Estimate {
    let cutoff = comm.gain_threshold * profile.channel_variance;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let e: f64 = Exp1.sample(rng);
        let z = e * profile.channel_variance;
        if z >= cutoff && z > 0.0 {
            let v = 1.0 / (1.0 + profile.transmit_power_w * z / comm.noise_power_w).log2();
            s += v;
            s2 += v * v;
        }
    }
    Estimate::from_sums(s, s2, samples)
}

/// Monte Carlo estimate of a future round's upload time when the device is
/// drawn with probability `n_m / n` and a below-threshold channel costs nothing.
pub fn mc_future_time<R: Rng + ?Sized>(devices: &[DeviceProfile], comm: &CommParams, samples: usize, rng: &mut R) -> Estimate {
    let total: usize = devices.iter().map(|d| d.dataset_size).sum();
    let payload = f64::from(comm.bits_per_param) * comm.num_params as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let mut pick = rng.random_range(0..total);
        let dev = devices
            .iter()
            .find(|d| {
                if pick < d.dataset_size {
                    true
                } else {
                    pick -= d.dataset_size;
                    false
                }
            })
            .expect("pick < total");
        let e: f64 = Exp1.sample(rng);
        let v = if e >= comm.gain_threshold && e > 0.0 {
            let rate = (1.0 + dev.transmit_power_w * e * dev.channel_variance / comm.noise_power_w).log2();
            payload / (comm.bandwidth_hz * rate)
        } else {
            0.0
        };
        s += v;
        s2 += v * v;
    }
    Estimate::from_sums(s, s2, samples)
}

/// Component-wise Monte Carlo mean of the scaled upload when one device is
/// drawn from `dist` per trial.
pub fn mc_scaled_upload<R: Rng + ?Sized>(
    grads: &GradientSet,
    dist: &SchedulingDistribution,
    sizes: &[usize],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Estimate>> {
    let n: usize = sizes.iter().sum();
    let dim = grads.grads.first().map_or(0, |g| g.len());
    let mut s = vec![0.0; dim];
    let mut s2 = vec![0.0; dim];
    for _ in 0..samples {
        let m = scheduler::sample_device(dist, rng);
        let up = learning::scaled_upload(&grads.grads[m], sizes[m], n, dist.probs()[m], m)?;
        for i in 0..dim {
            s[i] += up[i];
            s2[i] += up[i] * up[i];
        }
    }
    Ok((0..dim).map(|i| Estimate::from_sums(s[i], s2[i], samples)).collect())
}

/// Central-difference gradient of `f` at `w`.
pub fn finite_difference<F: Fn(&Vector) -> f64>(f: F, w: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(w.len());
    let mut probe = w.clone();
    for i in 0..w.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Relative error of `analytic` against the central-difference gradient.
pub fn gradient_check(task: &LearningTask, w: &Vector) -> f64 {
    let numeric = finite_difference(|x| task.loss(x), w, 1e-5);
    let analytic = task.gradient(w);
    (analytic - &numeric).norm() / numeric.norm().max(1e-12)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub const ORACLE_NAMES: [&str; 4] = ["grid-search", "mc-q", "unbiasedness", "finite-diff"];

/// Runs the named verification against `devices`/`comm` where relevant.
pub fn run_named(name: &str, devices: &[DeviceProfile], comm: &CommParams, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "grid-search" => grid_search_checks(&mut rng),
        "mc-q" => devices
            .iter()
            .enumerate()
            .map(|(m, d)| {
                let q = channel::q_factor(d, comm)?;
                let est = mc_q_factor(d, comm, 1_000_000, &mut rng);
                Ok(OracleCheck {
                    name: format!("q_factor device {m}"),
                    passed: est.agrees(q, 3.0),
                    detail: format!("quadrature {q:.8e}, monte carlo {:.8e} +- {:.2e}", est.mean, est.std_err),
                })
            })
            .collect(),
        "unbiasedness" => unbiasedness_checks(devices, comm, &mut rng),
        "finite-diff" => {
            let sizes: Vec<usize> = devices.iter().map(|d| d.dataset_size).collect();
            let quad = learning::make_quadratic_task(5, &sizes, 1.0, &mut rng)?;
            let logi = learning::make_logistic_task(5, &sizes, 0.5, 0.1, &mut rng)?;
            let mut checks = Vec::new();
            for (label, task) in [("quadratic", &quad), ("logistic", &logi)] {
                let worst = (0..10)
                    .map(|_| {
                        let w = Vector::from_fn(task.dim(), |_, _| rng.random_range(-2.0..2.0));
                        gradient_check(task, &w)
                    })
                    .fold(0.0, f64::max);
                checks.push(OracleCheck {
                    name: format!("{label} gradient"),
                    passed: worst < 1e-5,
                    detail: format!("worst relative error {worst:.3e} over 10 points"),
                });
            }
            Ok(checks)
        }
        other => Err(Error::param(
            "oracle",
            format!("unknown oracle `{other}`; expected one of {}", ORACLE_NAMES.join(", ")),
        )),
    }
}

fn grid_search_checks<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();
    for i in 0..10 {
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..5.0)).collect();
        let rho = rng.random_range(0.5..5.0);
        let (p, _) = scheduler::ctm_probabilities(rho, &a, &b)?;
        let weight = rho * rho;
        let ours = direct_objective(weight, &a, &b, &p);
        let (grid, _) = simplex_grid_min(3, 1000, |q| direct_objective(weight, &a, &b, q));
        checks.push(OracleCheck {
            name: format!("instance {i}"),
            passed: ours <= grid + 1e-6,
            detail: format!("closed form {ours:.9}, grid {grid:.9}"),
        });
    }
    Ok(checks)
}

fn unbiasedness_checks<R: Rng + ?Sized>(devices: &[DeviceProfile], comm: &CommParams, rng: &mut R) -> Result<Vec<OracleCheck>> {
    let sizes: Vec<usize> = devices.iter().map(|d| d.dataset_size).collect();
    let task = learning::make_quadratic_task(4, &sizes, 1.0, rng)?;
    let w = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let channel = channel::sample_channels(devices, comm, rng);
    let bound = BoundParams::new(
        task.smoothness(),
        task.strong_convexity(),
        1e-2,
        StepSchedule::new(1.0 / task.strong_convexity(), 10.0)?,
        5,
    )?;
    let future = channel::expected_future_time(devices, comm)?;

    let mut checks = Vec::new();
    for kind in PolicyKind::ALL {
        let full = task.gradient_set(&w, None, rng)?;
        let first = decide(kind, &full, &channel, comm, &bound, future)?;
        // Devices the policy never draws contribute nothing only if their
        // gradient is zero; zero them out and re-decide.
        let grads: Vec<Vector> = full
            .grads
            .iter()
            .zip(first.probs())
            .map(|(g, &p)| if p > 0.0 { g.clone() } else { Vector::zeros(g.len()) })
            .collect();
        let grads = GradientSet::new(grads, &sizes)?;
        let dist = decide(kind, &grads, &channel, comm, &bound, future)?;
        let target = grads.aggregate();
        let est = mc_scaled_upload(&grads, &dist, &sizes, 100_000, rng)?;
        let passed = est.iter().zip(target.iter()).all(|(e, &t)| e.agrees(t, 3.0));
        let worst = est
            .iter()
            .zip(target.iter())
            .map(|(e, &t)| (e.mean - t).abs() / e.std_err.max(ROUNDING * t.abs().max(1.0)))
            .fold(0.0, f64::max);
        checks.push(OracleCheck {
            name: format!("{kind} scaled upload"),
            passed,
            detail: format!("largest deviation {worst:.2} standard errors"),
        });
    }
    Ok(checks)
}

fn decide(
    kind: PolicyKind,
    grads: &GradientSet,
    channel: &crate::channel::ChannelRealization,
    comm: &CommParams,
    bound: &BoundParams,
    future_time: f64,
) -> Result<SchedulingDistribution> {
    let inputs = scheduler::RoundInputs {
        grads,
        channel,
        comm,
        bound,
        future_time,
        ica_beta: scheduler::DEFAULT_ICA_BETA,
    };
    Ok(scheduler::decide(kind, &inputs)?.distribution)
}
