//! Scheduling policies. Every policy maps the round's gradients and channel
//! state to a probability vector over devices, from which exactly one
//! uploader is drawn.

mod baselines;
mod bound;
mod ctm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, CommParams};
use crate::error::{Error, Result};
use crate::learning::GradientSet;

pub use baselines::{channel_aware_policy, ica_policy, importance_aware_policy, uniform_policy};
pub use bound::{remaining_rounds_bound, BoundParams, RoundsBound};
pub use ctm::{ctm_policy, ctm_probabilities, p2_objective, rho, CtmSolution};

/// Tolerance on `sum p = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub const DEFAULT_ICA_BETA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Uniform,
    #[serde(rename = "ia")]
    ImportanceAware,
    #[serde(rename = "ca")]
    ChannelAware,
    Ica,
    Ctm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Ctm,
        PolicyKind::ImportanceAware,
        PolicyKind::ChannelAware,
        PolicyKind::Ica,
        PolicyKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::ImportanceAware => "ia",
            PolicyKind::ChannelAware => "ca",
            PolicyKind::Ica => "ica",
            PolicyKind::Ctm => "ctm",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(PolicyKind::Uniform),
            "ia" => Ok(PolicyKind::ImportanceAware),
            "ca" => Ok(PolicyKind::ChannelAware),
            "ica" => Ok(PolicyKind::Ica),
            "ctm" => Ok(PolicyKind::Ctm),
            other => Err(Error::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingDistribution {
    probs: Vec<f64>,
    policy: PolicyKind,
}

impl SchedulingDistribution {
    /// Checks non-negativity and normalization.
    pub fn new(probs: Vec<f64>, policy: PolicyKind) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("probabilities", "empty distribution"));
        }
        if let Some((m, &p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Scheduling {
                device: m,
                probability: p,
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Numeric(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs, policy })
    }

    /// All mass on one device.
    pub fn point_mass(len: usize, device: usize, policy: PolicyKind) -> Self {
        let mut probs = vec![0.0; len];
        probs[device] = 1.0;
        Self { probs, policy }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax_first(&self.probs)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum()
    }
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws one device index with probability `p_m`.
pub fn sample_device<R: Rng + ?Sized>(dist: &SchedulingDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (m, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = m;
            if u < cumulative {
                return m;
            }
        }
    }
    // Rounding left the cumulative sum just below u.
    last_positive
}

/// Everything a policy may consult in one round.
#[derive(Debug, Clone, Copy)]
pub struct RoundInputs<'a> {
    pub grads: &'a GradientSet,
    pub channel: &'a ChannelRealization,
    pub comm: &'a CommParams,
    pub bound: &'a BoundParams,
    /// Expected upload time of a future round.
    pub future_time: f64,
    pub ica_beta: f64,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub distribution: SchedulingDistribution,
    pub ctm: Option<CtmSolution>,
}

pub fn decide(kind: PolicyKind, inputs: &RoundInputs<'_>) -> Result<Decision> {
    let distribution = match kind {
        PolicyKind::Uniform => uniform_policy(inputs.grads.len())?,
        PolicyKind::ImportanceAware => importance_aware_policy(inputs.grads)?,
        PolicyKind::ChannelAware => channel_aware_policy(inputs.channel)?,
        PolicyKind::Ica => ica_policy(inputs.grads, inputs.channel, inputs.ica_beta)?,
        PolicyKind::Ctm => {
            let sol = ctm_policy(inputs.grads, inputs.channel, inputs.comm, inputs.bound, inputs.future_time)?;
            return Ok(Decision {
                distribution: sol.distribution.clone(),
                ctm: Some(sol),
            });
        }
    };
    Ok(Decision { distribution, ctm: None })
}
