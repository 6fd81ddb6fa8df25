//! Wireless uplink model: Rayleigh block fading, SNR, achievable rate and
//! upload latency, plus the expected reciprocal rate used to price future
//! rounds.
//!
//! All quantities are SI: hertz, watts, seconds. The gain threshold is a
//! dimensionless threshold on the *normalized* fading gain `|h|^2 / sigma^2`,
//! so one value applies to every device regardless of its path loss.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadOptions};

/// Width of the integration window (in units of the mean gain) past the
/// threshold. Mass beyond it is below `exp(-50)`.
const TAIL_WINDOW: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommParams {
    pub bandwidth_hz: f64,
    pub bits_per_param: u32,
    pub num_params: u64,
    pub noise_power_w: f64,
    pub gain_threshold: f64,
    pub broadcast_time_s: f64,
}

impl CommParams {
    pub fn new(
        bandwidth_hz: f64,
        bits_per_param: u32,
        num_params: u64,
        noise_power_w: f64,
        gain_threshold: f64,
        broadcast_time_s: f64,
    ) -> Result<Self> {
        let comm = Self {
            bandwidth_hz,
            bits_per_param,
            num_params,
            noise_power_w,
            gain_threshold,
            broadcast_time_s,
        };
        comm.validate()?;
        Ok(comm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::param("bandwidth_hz", format!("must be > 0, got {}", self.bandwidth_hz)));
        }
        if self.bits_per_param < 1 {
            return Err(Error::param("bits_per_param", "must be >= 1"));
        }
        if self.num_params < 1 {
            return Err(Error::param("num_params", "must be >= 1"));
        }
        if !(self.noise_power_w > 0.0 && self.noise_power_w.is_finite()) {
            return Err(Error::param("noise_power_w", format!("must be > 0, got {}", self.noise_power_w)));
        }
        if !(self.gain_threshold >= 0.0 && self.gain_threshold.is_finite()) {
            return Err(Error::param("gain_threshold", format!("must be >= 0, got {}", self.gain_threshold)));
        }
        if !(self.broadcast_time_s >= 0.0 && self.broadcast_time_s.is_finite()) {
            return Err(Error::param("broadcast_time_s", format!("must be >= 0, got {}", self.broadcast_time_s)));
        }
        Ok(())
    }

    /// Payload of one gradient upload, `q * d`.
    pub fn payload_bits(&self) -> f64 {
        f64::from(self.bits_per_param) * self.num_params as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub dataset_size: usize,
    /// Mean of the exponentially distributed power gain `|h|^2`.
    pub channel_variance: f64,
    pub transmit_power_w: f64,
    pub distance_km: Option<f64>,
}

impl DeviceProfile {
    pub fn new(dataset_size: usize, channel_variance: f64, transmit_power_w: f64) -> Result<Self> {
        let profile = Self {
            dataset_size,
            channel_variance,
            transmit_power_w,
            distance_km: None,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Profile whose channel variance follows the path-loss law at `distance_km`.
    pub fn at_distance(dataset_size: usize, distance_km: f64, transmit_power_w: f64) -> Result<Self> {
        let profile = Self {
            dataset_size,
            channel_variance: path_loss_variance(distance_km)?,
            transmit_power_w,
            distance_km: Some(distance_km),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_size < 1 {
            return Err(Error::param("dataset_size", "must be >= 1"));
        }
        if !(self.channel_variance > 0.0 && self.channel_variance.is_finite()) {
            return Err(Error::param(
                "channel_variance",
                format!("must be > 0, got {}", self.channel_variance),
            ));
        }
        if !(self.transmit_power_w > 0.0 && self.transmit_power_w.is_finite()) {
            return Err(Error::param(
                "transmit_power_w",
                format!("must be > 0, got {}", self.transmit_power_w),
            ));
        }
        Ok(())
    }

    /// Average received SNR, `P * sigma^2 / N0`.
    pub fn mean_snr(&self, comm: &CommParams) -> f64 {
        self.transmit_power_w * self.channel_variance / comm.noise_power_w
    }
}

/// One device's uplink state for a single round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    /// Power gain `|h|^2`.
    pub gain: f64,
    /// `|h|^2 / sigma^2`, unit-mean exponential.
    pub fading: f64,
    pub snr: f64,
    /// Achievable spectral efficiency `log2(1 + snr)` in bit/s/Hz.
    pub rate: f64,
    /// `q d / (B rate)`; infinite when the rate is zero.
    pub upload_s: f64,
}

impl LinkState {
    pub fn from_gain(profile: &DeviceProfile, comm: &CommParams, gain: f64) -> Self {
        let snr = profile.transmit_power_w * gain / comm.noise_power_w;
        let rate = snr.ln_1p() / std::f64::consts::LN_2;
        let upload_s = upload_time(rate, comm).unwrap_or(f64::INFINITY);
        Self {
            gain,
            fading: gain / profile.channel_variance,
            snr,
            rate,
            upload_s,
        }
    }

    pub fn is_eligible(&self, gain_threshold: f64) -> bool {
        self.fading >= gain_threshold && self.upload_s.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub links: Vec<LinkState>,
}

impl ChannelRealization {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.rate).collect()
    }

    pub fn upload_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.upload_s).collect()
    }

    /// Builds a realization from explicit gains, one per device.
    pub fn from_gains(devices: &[DeviceProfile], comm: &CommParams, gains: &[f64]) -> Self {
        assert_eq!(devices.len(), gains.len(), "one gain per device");
        Self {
            links: devices
                .iter()
                .zip(gains)
                .map(|(d, &g)| LinkState::from_gain(d, comm, g))
                .collect(),
        }
    }
}

/// Draws one block-fading realization: `|h_m|^2 ~ Exp(mean = sigma_m^2)`,
/// independently per device.
pub fn sample_channels<R: Rng + ?Sized>(
    devices: &[DeviceProfile],
    comm: &CommParams,
    rng: &mut R,
) -> ChannelRealization {
    let links = devices
        .iter()
        .map(|d| {
            let fading: f64 = Exp1.sample(rng);
            LinkState::from_gain(d, comm, fading * d.channel_variance)
        })
        .collect();
    ChannelRealization { links }
}

/// Seconds needed to push one gradient at spectral efficiency `rate`.
pub fn upload_time(rate: f64, comm: &CommParams) -> Result<f64> {
    if rate.is_nan() || rate < 0.0 {
        return Err(Error::InvalidRate(rate));
    }
    if rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(comm.payload_bits() / (comm.bandwidth_hz * rate))
}

/// Path loss in dB at `distance_km`: `128.1 + 37.6 log10(d)`.
pub fn path_loss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0 && distance_km.is_finite()) {
        return Err(Error::InvalidDistance(distance_km));
    }
    Ok(128.1 + 37.6 * distance_km.log10())
}

/// Linear mean power gain implied by the path loss at `distance_km`.
pub fn path_loss_variance(distance_km: f64) -> Result<f64> {
    Ok(10f64.powf(-path_loss_db(distance_km)? / 10.0))
}

/// Expected reciprocal rate `E[1/R; |h|^2 >= g_th sigma^2]`, truncated at the
/// threshold and not renormalized by the surviving probability mass.
///
/// With `u = z / sigma^2` the integral becomes
/// `int_{g_th}^inf exp(-u) / log2(1 + snr_bar u) du`, which is evaluated on
/// `[g_th, g_th + 50]`; the dropped tail is below `exp(-50)` times the
/// integrand at the window edge.
pub fn q_factor(profile: &DeviceProfile, comm: &CommParams) -> Result<f64> {
    let threshold = comm.gain_threshold;
    if !(threshold > 0.0) {
        return Err(Error::Threshold(threshold));
    }
    let snr_bar = profile.mean_snr(comm);
    let integrand = |u: f64| (-u).exp() * std::f64::consts::LN_2 / (snr_bar * u).ln_1p();

    let opts = QuadOptions {
        abs_tol: 1e-8,
        rel_tol: 1e-10,
        max_intervals: 4000,
    };
    let result = quadrature::integrate(integrand, threshold, threshold + TAIL_WINDOW, opts)?;
    if !(result.value > 0.0) {
        return Err(Error::Numeric(format!(
            "expected reciprocal rate evaluated to {} ({} intervals)",
            result.value, result.intervals
        )));
    }
    Ok(result.value)
}

/// Expected upload time of a future round when devices are drawn in
/// proportion to their dataset sizes: `sum_m q d n_m Q_m / (n B)`.
pub fn expected_future_time(devices: &[DeviceProfile], comm: &CommParams) -> Result<f64> {
    if devices.is_empty() {
        return Err(Error::param("devices", "at least one device is required"));
    }
    let total: usize = devices.iter().map(|d| d.dataset_size).sum();
    let mut weighted = 0.0;
    for d in devices {
        weighted += d.dataset_size as f64 * q_factor(d, comm)?;
    }
    Ok(comm.payload_bits() * weighted / (total as f64 * comm.bandwidth_hz))
}
