//! Per-device quadratic losses `1/2 (w - c_j)^T A_m (w - c_j)`, one center
//! `c_j` per sample and one curvature matrix per device.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticDevice {
    pub hessian: DMatrix<f64>,
    /// One column per sample.
    pub centers: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct QuadraticModel {
    devices: Vec<QuadraticDevice>,
    mean_centers: Vec<DVector<f64>>,
    // Average of 1/2 (c_j - c_mean)^T A (c_j - c_mean) over the device's samples.
    spread_loss: Vec<f64>,
}

impl QuadraticModel {
    pub(crate) fn new(devices: Vec<QuadraticDevice>) -> Result<Self> {
        let dim = devices
            .first()
            .ok_or_else(|| Error::Construction("no devices".into()))?
            .hessian
            .nrows();
        let mut mean_centers = Vec::with_capacity(devices.len());
        let mut spread_loss = Vec::with_capacity(devices.len());
        for (m, dev) in devices.iter().enumerate() {
            if dev.hessian.shape() != (dim, dim) || dev.centers.nrows() != dim {
                return Err(Error::Construction(format!("device {m}: dimension mismatch")));
            }
            if dev.centers.ncols() == 0 {
                return Err(Error::Construction(format!("device {m}: no samples")));
            }
            if (&dev.hessian - dev.hessian.transpose()).amax() > 1e-12 * dev.hessian.amax().max(1.0) {
                return Err(Error::Construction(format!("device {m}: curvature is not symmetric")));
            }
            let mean = dev.centers.column_mean();
            let spread = dev
                .centers
                .column_iter()
                .map(|c| {
                    let d = c - &mean;
                    0.5 * d.dot(&(&dev.hessian * &d))
                })
                .sum::<f64>()
                / dev.centers.ncols() as f64;
            mean_centers.push(mean);
            spread_loss.push(spread);
        }
        Ok(Self {
            devices,
            mean_centers,
            spread_loss,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.devices[0].hessian.nrows()
    }

    pub(crate) fn sizes(&self) -> Vec<usize> {
        self.devices.iter().map(|d| d.centers.ncols()).collect()
    }

    pub(crate) fn device_loss(&self, m: usize, w: &DVector<f64>) -> f64 {
        let d = w - &self.mean_centers[m];
        0.5 * d.dot(&(&self.devices[m].hessian * &d)) + self.spread_loss[m]
    }

    pub(crate) fn device_gradient(&self, m: usize, w: &DVector<f64>) -> DVector<f64> {
        &self.devices[m].hessian * (w - &self.mean_centers[m])
    }

    pub(crate) fn batch_gradient(&self, m: usize, batch: &[usize], w: &DVector<f64>) -> DVector<f64> {
        let dev = &self.devices[m];
        let mut center = DVector::zeros(w.len());
        for &j in batch {
            center += dev.centers.column(j);
        }
        center /= batch.len() as f64;
        &dev.hessian * (w - center)
    }

    /// Weighted average curvature and the right-hand side of the optimality
    /// condition `H w* = sum (n_m/n) A_m c_m`.
    pub(crate) fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let total: usize = self.sizes().iter().sum();
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (dev, mean) in self.devices.iter().zip(&self.mean_centers) {
            let weight = dev.centers.ncols() as f64 / total as f64;
            h += &dev.hessian * weight;
            rhs += (&dev.hessian * mean) * weight;
        }
        (h, rhs)
    }
}

/// Random device curvatures `0.5 I + 0.5 G G^T` (spectrum roughly in
/// `[0.5, 2.5]`), device centers spread by `heterogeneity`, and per-sample
/// centers scattered around them with unit-scale noise.
pub(crate) fn random_devices<R: Rng + ?Sized>(
    dim: usize,
    sizes: &[usize],
    heterogeneity: f64,
    rng: &mut R,
) -> Vec<QuadraticDevice> {
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    sizes
        .iter()
        .map(|&n| {
            let g = DMatrix::from_fn(dim, dim, |_, _| normal() / (dim as f64).sqrt());
            let hessian = DMatrix::identity(dim, dim) * 0.5 + (&g * g.transpose()) * 0.5;
            // Symmetrize away rounding.
            let hessian = (&hessian + hessian.transpose()) * 0.5;
            let center = DVector::from_fn(dim, |_, _| heterogeneity * normal());
            let centers = DMatrix::from_fn(dim, n, |i, _| center[i] + 0.5 * normal());
            QuadraticDevice { hessian, centers }
        })
        .collect()
}
