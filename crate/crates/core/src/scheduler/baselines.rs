use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::learning::GradientSet;

use super::{argmax_first, PolicyKind, SchedulingDistribution};

pub fn uniform_policy(devices: usize) -> Result<SchedulingDistribution> {
    if devices == 0 {
        return Err(Error::param("devices", "must be >= 1"));
    }
    SchedulingDistribution::new(vec![1.0 / devices as f64; devices], PolicyKind::Uniform)
}

/// `p_m` proportional to `n_m ||g_m||`, the minimizer of the rounds bound.
pub fn importance_aware_policy(grads: &GradientSet) -> Result<SchedulingDistribution> {
    let importance = grads.importance();
    let total: f64 = importance.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Starvation("all gradients are zero".into()));
    }
    let probs = importance.iter().map(|v| v / total).collect();
    SchedulingDistribution::new(probs, PolicyKind::ImportanceAware)
}

/// Deterministic: the device with the largest rate, lowest index on ties.
pub fn channel_aware_policy(channel: &ChannelRealization) -> Result<SchedulingDistribution> {
    if channel.is_empty() {
        return Err(Error::param("devices", "must be >= 1"));
    }
    let best = argmax_first(&channel.rates());
    Ok(SchedulingDistribution::point_mass(channel.len(), best, PolicyKind::ChannelAware))
}

/// Deterministic: the device maximizing `(n_m/n) ||g_m|| - beta T_m`.
pub fn ica_policy(grads: &GradientSet, channel: &ChannelRealization, beta: f64) -> Result<SchedulingDistribution> {
    if !(beta >= 0.0) {
        return Err(Error::param("ica_beta", format!("must be >= 0, got {beta}")));
    }
    if grads.len() != channel.len() || grads.is_empty() {
        return Err(Error::param("devices", "gradient and channel sets must be non-empty and aligned"));
    }
    let scores: Vec<f64> = grads
        .importance()
        .iter()
        .zip(&channel.links)
        .map(|(a, link)| {
            if link.upload_s.is_finite() {
                a - beta * link.upload_s
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let best = argmax_first(&scores);
    Ok(SchedulingDistribution::point_mass(grads.len(), best, PolicyKind::Ica))
}
