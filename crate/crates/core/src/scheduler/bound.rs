use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{GradientSet, StepSchedule};

use super::SchedulingDistribution;

/// Learning-side constants the scheduler needs at round `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub smoothness: f64,
    pub strong_convexity: f64,
    /// Target accuracy on the loss gap.
    pub epsilon: f64,
    pub schedule: StepSchedule,
    pub round: u64,
}

impl BoundParams {
    pub fn new(
        smoothness: f64,
        strong_convexity: f64,
        epsilon: f64,
        schedule: StepSchedule,
        round: u64,
    ) -> Result<Self> {
        let b = Self {
            smoothness,
            strong_convexity,
            epsilon,
            schedule,
            round,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(Error::param("smoothness", format!("must be > 0, got {}", self.smoothness)));
        }
        if !(self.strong_convexity > 0.0 && self.strong_convexity <= self.smoothness) {
            return Err(Error::param(
                "strong_convexity",
                format!("must lie in (0, smoothness], got {}", self.strong_convexity),
            ));
        }
        self.schedule.validate()?;
        self.check_step_condition()
    }

    pub(crate) fn check_step_condition(&self) -> Result<()> {
        if !self.schedule.satisfies_bound_condition(self.strong_convexity) {
            return Err(Error::Assumption(format!(
                "2 mu chi = {} must exceed 1",
                2.0 * self.strong_convexity * self.schedule.chi
            )));
        }
        Ok(())
    }

    pub fn at_round(&self, round: u64) -> Self {
        Self { round, ..*self }
    }

    pub fn eta(&self) -> f64 {
        self.schedule.eta(self.round)
    }

    /// `A(t) = smoothness (t + 1 + nu) / (2 epsilon)`.
    pub fn a_factor(&self) -> f64 {
        self.smoothness * (self.round as f64 + 1.0 + self.schedule.nu) / (2.0 * self.epsilon)
    }
}

/// Upper bound on the expected number of rounds still needed after this one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundsBound {
    /// The part that depends on the scheduling distribution.
    pub variance_term: f64,
    /// The part that does not.
    pub constant_term: f64,
}

impl RoundsBound {
    pub fn total(&self) -> f64 {
        self.variance_term + self.constant_term
    }
}

/// `sum_m (n_m/n)^2 ||g_m||^2 / p_m`, infinite if a device with a non-zero
/// gradient has zero probability.
pub(crate) fn weighted_second_moment(importance: &[f64], probs: &[f64]) -> f64 {
    importance
        .iter()
        .zip(probs)
        .map(|(&a, &p)| {
            if a == 0.0 {
                0.0
            } else if p > 0.0 {
                a * a / p
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Diagnostic bound on the remaining rounds. `max_grad_norm` stands in for
/// the largest expected uploaded gradient norm over the rounds to come; the
/// current global gradient is the dataset-weighted aggregate of `grads`.
pub fn remaining_rounds_bound(
    grads: &GradientSet,
    dist: &SchedulingDistribution,
    bound: &BoundParams,
    max_grad_norm: f64,
) -> Result<RoundsBound> {
    bound.check_step_condition()?;
    if dist.len() != grads.len() {
        return Err(Error::param("distribution", "length differs from the device count"));
    }
    let t = bound.round as f64;
    let nu = bound.schedule.nu;
    let chi = bound.schedule.chi;
    let eta = bound.eta();
    let (l, mu, eps) = (bound.smoothness, bound.strong_convexity, bound.epsilon);

    let variance_term =
        l * (t + 1.0 + nu) * eta * eta / (2.0 * eps) * weighted_second_moment(&grads.importance(), dist.probs());

    let global_sq = grads.aggregate().norm_squared();
    let constant_term = l * chi * chi * max_grad_norm * max_grad_norm / (2.0 * eps * (2.0 * mu * chi - 1.0))
        + (t + nu + 1.0) * (1.0 / (2.0 * mu) - eta) * global_sq / eps
        - nu
        - t
        - 1.0;

    Ok(RoundsBound {
        variance_term,
        constant_term,
    })
}
