//! Communication-time-minimizing scheduling.
//!
//! Per round the policy minimizes
//!
//! ```text
//! rho^2 sum_m a_m^2 / p_m + sum_m p_m b_m     subject to sum_m p_m = 1
//! ```
//!
//! with `a_m = (n_m/n) ||g_m||`, `b_m` the current upload time of device `m`
//! and `rho^2 = A(t) eta_t^2 T_future`. Stationarity gives
//! `p_m = rho a_m / sqrt(b_m + lambda)`; the multiplier is the unique root of
//! `F(lambda) = sum_m p_m(lambda) = 1` on `(-min b, inf)`.
//!
//! The root is searched in the shifted variable `s = lambda + min b > 0` so
//! that the pole sits at zero and gaps `b_m - min b` are formed exactly once.

use crate::channel::{ChannelRealization, CommParams};
use crate::error::{Error, Result};
use crate::learning::GradientSet;

use super::bound::{weighted_second_moment, BoundParams};
use super::{PolicyKind, SchedulingDistribution};

const MAX_BRACKET_STEPS: usize = 200;
const MAX_BISECTIONS: usize = 4000;
const ROOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct CtmSolution {
    pub distribution: SchedulingDistribution,
    pub rho: f64,
    /// Lagrange multiplier of the simplex constraint.
    pub lambda: f64,
}

/// Trade-off factor `rho_t = sqrt(A(t) eta_t^2 T_future)`.
pub fn rho(bound: &BoundParams, future_time: f64) -> f64 {
    let eta = bound.eta();
    (bound.a_factor() * eta * eta * future_time).sqrt()
}

fn normalizer(rho: f64, importance: &[f64], gaps: &[f64], s: f64) -> f64 {
    importance
        .iter()
        .zip(gaps)
        .map(|(&a, &gap)| rho * a / (gap + s).sqrt())
        .sum()
}

/// Solves the per-round problem for strictly positive `importance` and
/// finite non-negative `upload_times`; returns the probabilities and the
/// multiplier.
pub fn ctm_probabilities(rho: f64, importance: &[f64], upload_times: &[f64]) -> Result<(Vec<f64>, f64)> {
    if importance.is_empty() || importance.len() != upload_times.len() {
        return Err(Error::param("importance", "must be non-empty and aligned with upload times"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Numeric(format!("trade-off factor must be positive and finite, got {rho}")));
    }
    if importance.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::param("importance", "entries must be positive and finite"));
    }
    if upload_times.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::param("upload_times", "entries must be finite and non-negative"));
    }
    if importance.len() == 1 {
        let lambda = (rho * importance[0]).powi(2) - upload_times[0];
        return Ok((vec![1.0], lambda));
    }

    let b_min = upload_times.iter().copied().fold(f64::INFINITY, f64::min);
    let gaps: Vec<f64> = upload_times.iter().map(|b| b - b_min).collect();
    let f = |s: f64| normalizer(rho, importance, &gaps, s);

    let total: f64 = importance.iter().sum();
    let mut hi = ((rho * total).powi(2)).max(1.0) + b_min;
    let mut steps = 0;
    while f(hi) >= 1.0 {
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BRACKET_STEPS || !hi.is_finite() {
            return Err(Error::Numeric(format!("no upper bracket for the multiplier after {steps} doublings")));
        }
    }
    let mut lo = 1e-12_f64.min(hi * 0.5);
    steps = 0;
    while f(lo) <= 1.0 {
        lo *= 1e-4;
        steps += 1;
        if steps > MAX_BRACKET_STEPS || lo == 0.0 {
            return Err(Error::Numeric("no lower bracket for the multiplier".into()));
        }
    }

    let mut s = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        s = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if s <= lo || s >= hi {
            break;
        }
        let value = f(s);
        if (value - 1.0).abs() < ROOT_TOL {
            break;
        }
        if value > 1.0 {
            lo = s;
        } else {
            hi = s;
        }
    }

    let mut probs: Vec<f64> = importance
        .iter()
        .zip(&gaps)
        .map(|(&a, &gap)| rho * a / (gap + s).sqrt())
        .collect();
    let sum: f64 = probs.iter().sum();
    if !((sum - 1.0).abs() < 1e-6) {
        return Err(Error::Numeric(format!("bisection stalled with sum of probabilities {sum}")));
    }
    for p in &mut probs {
        *p /= sum;
    }
    Ok((probs, s - b_min))
}

/// Optimized scheduling distribution. Devices with a zero gradient or a
/// normalized channel gain below the threshold get probability zero; the
/// remaining ones share the simplex through the multiplier.
pub fn ctm_policy(
    grads: &GradientSet,
    channel: &ChannelRealization,
    comm: &CommParams,
    bound: &BoundParams,
    future_time: f64,
) -> Result<CtmSolution> {
    if grads.len() != channel.len() || grads.is_empty() {
        return Err(Error::param("devices", "gradient and channel sets must be non-empty and aligned"));
    }
    let importance = grads.importance();
    let eligible: Vec<usize> = (0..grads.len())
        .filter(|&m| importance[m] > 0.0 && channel.links[m].is_eligible(comm.gain_threshold))
        .collect();
    if eligible.is_empty() {
        return Err(Error::Starvation(
            "no device has both a non-zero gradient and a channel above the threshold".into(),
        ));
    }

    let rho = rho(bound, future_time);
    let a: Vec<f64> = eligible.iter().map(|&m| importance[m]).collect();
    let b: Vec<f64> = eligible.iter().map(|&m| channel.links[m].upload_s).collect();
    let (sub, lambda) = ctm_probabilities(rho, &a, &b)?;

    let mut probs = vec![0.0; grads.len()];
    for (&m, p) in eligible.iter().zip(sub) {
        probs[m] = p;
    }
    Ok(CtmSolution {
        distribution: SchedulingDistribution::new(probs, PolicyKind::Ctm)?,
        rho,
        lambda,
    })
}

/// Per-round look-ahead objective
/// `A(t) eta_t^2 T_future sum (n_m/n)^2 ||g_m||^2 / p_m + sum p_m T_m`.
/// Infinite when a device with a non-zero gradient has `p_m = 0`.
pub fn p2_objective(
    probs: &[f64],
    grads: &GradientSet,
    channel: &ChannelRealization,
    bound: &BoundParams,
    future_time: f64,
) -> f64 {
    let eta = bound.eta();
    let weight = bound.a_factor() * eta * eta * future_time;
    objective_from_parts(weight, &grads.importance(), &channel.upload_times(), probs)
}

pub(crate) fn objective_from_parts(weight: f64, importance: &[f64], upload_times: &[f64], probs: &[f64]) -> f64 {
    let latency: f64 = probs
        .iter()
        .zip(upload_times)
        .map(|(&p, &t)| if p > 0.0 { p * t } else { 0.0 })
        .sum();
    weight * weighted_second_moment(importance, probs) + latency
}
