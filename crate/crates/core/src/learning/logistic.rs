//! L2-regularized logistic regression with device-dependent label priors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct LogisticModel {
    /// Features, one column per sample, grouped by device.
    features: Vec<DMatrix<f64>>,
    labels: Vec<Vec<f64>>,
    l2_reg: f64,
    pub(crate) label_priors: Vec<f64>,
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub(crate) fn generate<R: Rng + ?Sized>(
        dim: usize,
        sizes: &[usize],
        label_skew: f64,
        l2_reg: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(l2_reg > 0.0) {
            return Err(Error::param("l2_reg", format!("must be > 0, got {l2_reg}")));
        }
        if !(0.0..=1.0).contains(&label_skew) {
            return Err(Error::param("label_skew", format!("must lie in [0, 1], got {label_skew}")));
        }
        let m_count = sizes.len();
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let mut direction = DVector::from_fn(dim, |_, _| normal());
        direction /= direction.norm().max(f64::MIN_POSITIVE);

        let mut features = Vec::with_capacity(m_count);
        let mut labels = Vec::with_capacity(m_count);
        let mut label_priors = Vec::with_capacity(m_count);
        for (m, &n) in sizes.iter().enumerate() {
            let position = if m_count > 1 {
                m as f64 / (m_count - 1) as f64
            } else {
                0.5
            };
            let prior = 0.5 + label_skew * (position - 0.5) * 0.9;
            label_priors.push(prior);

            let mut x = DMatrix::zeros(dim, n);
            let mut y = Vec::with_capacity(n);
            for j in 0..n {
                let u: f64 = rng.random();
                let label = if u < prior { 1.0 } else { -1.0 };
                for i in 0..dim {
                    x[(i, j)] = label * direction[i] + Distribution::<f64>::sample(&StandardNormal, rng);
                }
                y.push(label);
            }
            features.push(x);
            labels.push(y);
        }
        Ok(Self {
            features,
            labels,
            l2_reg,
            label_priors,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.features[0].nrows()
    }

    pub(crate) fn sizes(&self) -> Vec<usize> {
        self.labels.iter().map(Vec::len).collect()
    }

    pub(crate) fn l2_reg(&self) -> f64 {
        self.l2_reg
    }

    pub(crate) fn device_loss(&self, m: usize, w: &DVector<f64>) -> f64 {
        let x = &self.features[m];
        let y = &self.labels[m];
        let data: f64 = x
            .column_iter()
            .zip(y)
            .map(|(col, &label)| log1p_exp(-label * col.dot(w)))
            .sum::<f64>()
            / y.len() as f64;
        data + 0.5 * self.l2_reg * w.norm_squared()
    }

    fn accumulate(&self, m: usize, j: usize, w: &DVector<f64>, out: &mut DVector<f64>) {
        let col = self.features[m].column(j);
        let label = self.labels[m][j];
        let coeff = -label * sigmoid(-label * col.dot(w));
        out.axpy(coeff, &col, 1.0);
    }

    pub(crate) fn device_gradient(&self, m: usize, w: &DVector<f64>) -> DVector<f64> {
        let n = self.labels[m].len();
        let mut g = DVector::zeros(w.len());
        for j in 0..n {
            self.accumulate(m, j, w, &mut g);
        }
        g /= n as f64;
        g.axpy(self.l2_reg, w, 1.0);
        g
    }

    pub(crate) fn batch_gradient(&self, m: usize, batch: &[usize], w: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(w.len());
        for &j in batch {
            self.accumulate(m, j, w, &mut g);
        }
        g /= batch.len() as f64;
        g.axpy(self.l2_reg, w, 1.0);
        g
    }

    /// Largest eigenvalue of the empirical second moment `(1/n) sum x x^T`;
    /// a quarter of it bounds the data-term curvature.
    pub(crate) fn second_moment_top(&self) -> f64 {
        let dim = self.dim();
        let mut s = DMatrix::zeros(dim, dim);
        let mut total = 0usize;
        for x in &self.features {
            s += x * x.transpose();
            total += x.ncols();
        }
        s /= total as f64;
        s.symmetric_eigenvalues().max()
    }
}
