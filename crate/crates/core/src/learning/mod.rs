//! Loss and gradient oracles for strongly convex tasks, the unbiased scaled
//! upload, and the global SGD step.

mod logistic;
mod quadratic;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quadratic::QuadraticDevice;

use logistic::LogisticModel;
use quadratic::QuadraticModel;

pub type Vector = DVector<f64>;

#[derive(Debug, Clone)]
enum Model {
    Quadratic(QuadraticModel),
    Logistic(LogisticModel),
}

/// A federated learning problem with known curvature constants and optimum.
#[derive(Debug, Clone)]
pub struct LearningTask {
    model: Model,
    sizes: Vec<usize>,
    smoothness: f64,
    strong_convexity: f64,
    optimum: Vector,
    optimal_loss: f64,
}

impl LearningTask {
    /// Quadratic task from explicit device data. Curvature constants and the
    /// optimum are exact.
    pub fn quadratic(devices: Vec<QuadraticDevice>) -> Result<Self> {
        let model = QuadraticModel::new(devices)?;
        let (h, rhs) = model.normal_equations();
        let eig = h.clone().symmetric_eigen();
        let smoothness = eig.eigenvalues.max();
        let strong_convexity = eig.eigenvalues.min();
        if !(strong_convexity > 1e-12 * smoothness.max(1.0)) {
            return Err(Error::Construction(format!(
                "average curvature is singular (eigenvalues in [{strong_convexity:e}, {smoothness:e}])"
            )));
        }
        let optimum = h
            .cholesky()
            .ok_or_else(|| Error::Construction("average curvature is not positive definite".into()))?
            .solve(&rhs);
        let sizes = model.sizes();
        let mut task = Self {
            model: Model::Quadratic(model),
            sizes,
            smoothness,
            strong_convexity,
            optimum,
            optimal_loss: 0.0,
        };
        task.optimal_loss = task.loss(&task.optimum);
        Ok(task)
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            Model::Quadratic(q) => q.dim(),
            Model::Logistic(l) => l.dim(),
        }
    }

    pub fn num_devices(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Smoothness constant (an upper curvature bound).
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Strong convexity constant (a lower curvature bound).
    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn optimum(&self) -> &Vector {
        &self.optimum
    }

    pub fn optimal_loss(&self) -> f64 {
        self.optimal_loss
    }

    /// Label prior of each device; `None` for tasks without labels.
    pub fn label_priors(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Logistic(l) => Some(&l.label_priors),
            Model::Quadratic(_) => None,
        }
    }

    fn check_device(&self, m: usize) -> Result<()> {
        if m >= self.sizes.len() {
            return Err(Error::DeviceIndex {
                index: m,
                devices: self.sizes.len(),
            });
        }
        Ok(())
    }

    /// Mean sample loss of device `m`.
    pub fn device_loss(&self, m: usize, w: &Vector) -> Result<f64> {
        self.check_device(m)?;
        Ok(match &self.model {
            Model::Quadratic(q) => q.device_loss(m, w),
            Model::Logistic(l) => l.device_loss(m, w),
        })
    }

    /// Exact local gradient of device `m` over its whole dataset.
    pub fn device_gradient(&self, m: usize, w: &Vector) -> Result<Vector> {
        self.check_device(m)?;
        Ok(match &self.model {
            Model::Quadratic(q) => q.device_gradient(m, w),
            Model::Logistic(l) => l.device_gradient(m, w),
        })
    }

    /// Global loss: the mean sample loss over every device's data.
    pub fn loss(&self, w: &Vector) -> f64 {
        let n = self.total_size() as f64;
        (0..self.num_devices())
            .map(|m| {
                let per = match &self.model {
                    Model::Quadratic(q) => q.device_loss(m, w),
                    Model::Logistic(l) => l.device_loss(m, w),
                };
                self.sizes[m] as f64 * per
            })
            .sum::<f64>()
            / n
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        let n = self.total_size() as f64;
        let mut g = Vector::zeros(w.len());
        for m in 0..self.num_devices() {
            let gm = match &self.model {
                Model::Quadratic(q) => q.device_gradient(m, w),
                Model::Logistic(l) => l.device_gradient(m, w),
            };
            g.axpy(self.sizes[m] as f64 / n, &gm, 1.0);
        }
        g
    }

    pub fn gap(&self, w: &Vector) -> f64 {
        self.loss(w) - self.optimal_loss
    }

    /// Mini-batch stochastic gradient of device `m`: the average sample
    /// gradient over `batch_size` samples drawn uniformly without
    /// replacement. A full batch returns the exact local gradient and does
    /// not touch `rng`.
    pub fn local_gradient<R: Rng + ?Sized>(
        &self,
        m: usize,
        w: &Vector,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vector> {
        self.check_device(m)?;
        let n_m = self.sizes[m];
        if batch_size == 0 || batch_size > n_m {
            return Err(Error::param(
                "batch_size",
                format!("must lie in 1..={n_m} for device {m}, got {batch_size}"),
            ));
        }
        if batch_size == n_m {
            return self.device_gradient(m, w);
        }
        let batch = index::sample(rng, n_m, batch_size).into_vec();
        Ok(match &self.model {
            Model::Quadratic(q) => q.batch_gradient(m, &batch, w),
            Model::Logistic(l) => l.batch_gradient(m, &batch, w),
        })
    }

    /// Full gradients of every device, packaged with their aggregation weights.
    pub fn gradient_set<R: Rng + ?Sized>(&self, w: &Vector, batch_size: Option<usize>, rng: &mut R) -> Result<GradientSet> {
        let grads = (0..self.num_devices())
            .map(|m| self.local_gradient(m, w, batch_size.unwrap_or(self.sizes[m]).min(self.sizes[m]), rng))
            .collect::<Result<Vec<_>>>()?;
        GradientSet::new(grads, &self.sizes)
    }
}

/// Quadratic task with random device curvatures and centers; see
/// [`LearningTask::quadratic`] for the exactness guarantees.
pub fn make_quadratic_task<R: Rng + ?Sized>(
    dim: usize,
    sizes: &[usize],
    heterogeneity: f64,
    rng: &mut R,
) -> Result<LearningTask> {
    if dim < 1 {
        return Err(Error::param("dim", "must be >= 1"));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::param("sizes", "need at least one device and every size >= 1"));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(Error::param("heterogeneity", format!("must be >= 0, got {heterogeneity}")));
    }
    LearningTask::quadratic(quadratic::random_devices(dim, sizes, heterogeneity, rng))
}

const LOGISTIC_GRAD_TOL: f64 = 1e-10;
const LOGISTIC_MAX_ITERS: usize = 200_000;

/// Logistic regression with Gaussian features and device-skewed labels.
/// The optimum is found once by full-gradient descent with step `1/smoothness`.
pub fn make_logistic_task<R: Rng + ?Sized>(
    dim: usize,
    sizes: &[usize],
    label_skew: f64,
    l2_reg: f64,
    rng: &mut R,
) -> Result<LearningTask> {
    if dim < 1 {
        return Err(Error::param("dim", "must be >= 1"));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::param("sizes", "need at least one device and every size >= 1"));
    }
    let model = LogisticModel::generate(dim, sizes, label_skew, l2_reg, rng)?;
    let smoothness = model.second_moment_top() / 4.0 + model.l2_reg();
    let strong_convexity = model.l2_reg();
    let mut task = LearningTask {
        sizes: model.sizes(),
        model: Model::Logistic(model),
        smoothness,
        strong_convexity,
        optimum: Vector::zeros(dim),
        optimal_loss: 0.0,
    };

    let step = 1.0 / smoothness;
    let mut w = Vector::zeros(dim);
    let mut converged = false;
    for _ in 0..LOGISTIC_MAX_ITERS {
        let g = task.gradient(&w);
        if g.norm() < LOGISTIC_GRAD_TOL {
            converged = true;
            break;
        }
        w.axpy(-step, &g, 1.0);
    }
    if !converged {
        return Err(Error::Construction(format!(
            "optimum search stopped after {LOGISTIC_MAX_ITERS} iterations with gradient norm {:e}",
            task.gradient(&w).norm()
        )));
    }
    task.optimal_loss = task.loss(&w);
    task.optimum = w;
    Ok(task)
}

/// Per-device gradients for one round with their dataset weights `n_m / n`.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub grads: Vec<Vector>,
    pub norms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GradientSet {
    pub fn new(grads: Vec<Vector>, sizes: &[usize]) -> Result<Self> {
        if grads.len() != sizes.len() {
            return Err(Error::param(
                "grads",
                format!("{} gradients for {} devices", grads.len(), sizes.len()),
            ));
        }
        let total: usize = sizes.iter().sum();
        let weights = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        let norms = grads.iter().map(|g| g.norm()).collect();
        Ok(Self { grads, norms, weights })
    }

    /// Gradient norms only; the vectors are left empty. Enough for every
    /// scheduling policy, which never looks past the norms.
    pub fn from_norms(norms: Vec<f64>, sizes: &[usize]) -> Result<Self> {
        if norms.len() != sizes.len() {
            return Err(Error::param("norms", "one norm per device"));
        }
        let total: usize = sizes.iter().sum();
        Ok(Self {
            grads: norms.iter().map(|_| Vector::zeros(0)).collect(),
            weights: sizes.iter().map(|&s| s as f64 / total as f64).collect(),
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// `sum_m (n_m / n) g_m`.
    pub fn aggregate(&self) -> Vector {
        let dim = self.grads.first().map_or(0, |g| g.len());
        let mut out = Vector::zeros(dim);
        for (g, &w) in self.grads.iter().zip(&self.weights) {
            out.axpy(w, g, 1.0);
        }
        out
    }

    /// Importance of each device, `(n_m / n) ||g_m||`.
    pub fn importance(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.norms).map(|(w, g)| w * g).collect()
    }
}

/// Diminishing stepsize `eta_t = chi / (t + nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub chi: f64,
    pub nu: f64,
}

impl StepSchedule {
    pub fn new(chi: f64, nu: f64) -> Result<Self> {
        let s = Self { chi, nu };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(Error::param("chi", format!("must be > 0, got {}", self.chi)));
        }
        // nu = 0 would make the first step infinite.
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::param("nu", format!("must be > 0, got {}", self.nu)));
        }
        Ok(())
    }

    pub fn eta(&self, t: u64) -> f64 {
        self.chi / (t as f64 + self.nu)
    }

    /// Whether `2 mu chi > 1`, the condition behind the remaining-rounds bound.
    pub fn satisfies_bound_condition(&self, strong_convexity: f64) -> bool {
        2.0 * strong_convexity * self.chi > 1.0
    }
}

/// What a scheduled device transmits: `n_m / (n p_m) * g_m`, unbiased for
/// the weighted aggregate when the device was drawn with probability `p_m`.
pub fn scaled_upload(grad: &Vector, n_m: usize, n: usize, probability: f64, device: usize) -> Result<Vector> {
    if !(probability > 0.0) {
        return Err(Error::Scheduling { device, probability });
    }
    Ok(grad * (n_m as f64 / (n as f64 * probability)))
}

pub fn apply_update(w: &Vector, t: u64, schedule: &StepSchedule, update: &Vector) -> Vector {
    w - update * schedule.eta(t)
}

/// One-dimensional quadratic device with the given curvature and one sample
/// per center.
pub fn scalar_device(curvature: f64, centers: &[f64]) -> QuadraticDevice {
    QuadraticDevice {
        hessian: DMatrix::from_element(1, 1, curvature),
        centers: DMatrix::from_row_slice(1, centers.len(), centers),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn scalar_quadratic_single_device() {
        let task = LearningTask::quadratic(vec![scalar_device(1.0, &[0.0])]).unwrap();
        assert_eq!(task.optimum()[0], 0.0);
        assert_eq!(task.optimal_loss(), 0.0);
        assert_eq!(task.smoothness(), 1.0);
        assert_eq!(task.strong_convexity(), 1.0);
    }

    #[test]
    fn two_devices_opposite_centers() {
        let task = LearningTask::quadratic(vec![
            scalar_device(1.0, &[1.0, 1.0]),
            scalar_device(1.0, &[-1.0, -1.0]),
        ])
        .unwrap();
        assert!(task.optimum()[0].abs() < 1e-15);
        // 1/2 * mean((0 - c)^2) with c = +-1.
        assert!((task.optimal_loss() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_curvature_is_rejected() {
        let dev = QuadraticDevice {
            hessian: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            centers: DMatrix::zeros(2, 3),
        };
        assert!(matches!(LearningTask::quadratic(vec![dev]), Err(Error::Construction(_))));
    }

    #[test]
    fn random_quadratic_optimum_is_stationary() {
        let task = make_quadratic_task(6, &[10, 20, 30], 2.0, &mut rng()).unwrap();
        assert!(task.gradient(task.optimum()).norm() < 1e-12);
        assert!(task.strong_convexity() <= task.smoothness());
    }

    #[test]
    fn logistic_without_skew_has_identical_priors() {
        let task = make_logistic_task(3, &[50, 60, 70], 0.0, 0.1, &mut rng()).unwrap();
        let priors = task.label_priors().unwrap();
        assert!(priors.iter().all(|&p| p == priors[0]));
        assert!(task.strong_convexity() >= 0.1);
        assert!(task.gradient(task.optimum()).norm() < 1e-10);
    }

    #[test]
    fn logistic_skew_separates_priors() {
        let task = make_logistic_task(3, &[50, 60], 1.0, 0.1, &mut rng()).unwrap();
        let priors = task.label_priors().unwrap();
        assert!(priors[0] < 0.5 && priors[1] > 0.5);
    }

    #[test]
    fn logistic_rejects_zero_regularizer() {
        assert!(make_logistic_task(3, &[5], 0.0, 0.0, &mut rng()).is_err());
    }

    #[test]
    fn full_batch_is_exact_and_bad_index_errors() {
        let task = make_quadratic_task(3, &[8, 4], 1.0, &mut rng()).unwrap();
        let w = Vector::from_element(3, 0.3);
        let mut r = rng();
        let g = task.local_gradient(1, &w, 4, &mut r).unwrap();
        assert_eq!(g, task.device_gradient(1, &w).unwrap());
        assert!(matches!(
            task.local_gradient(2, &w, 1, &mut r),
            Err(Error::DeviceIndex { index: 2, devices: 2 })
        ));
        assert!(task.local_gradient(1, &w, 5, &mut r).is_err());
    }

    #[test]
    fn scaled_upload_examples() {
        let g = Vector::from_vec(vec![1.0, 0.0]);
        // n_m / n = 0.5, p = 0.25.
        let up = scaled_upload(&g, 5, 10, 0.25, 0).unwrap();
        assert_eq!(up, Vector::from_vec(vec![2.0, 0.0]));
        let same = scaled_upload(&g, 3, 12, 0.25, 0).unwrap();
        assert_eq!(same, g);
        assert!(matches!(scaled_upload(&g, 1, 2, 0.0, 4), Err(Error::Scheduling { device: 4, .. })));
    }

    #[test]
    fn step_schedule_and_update() {
        let s = StepSchedule::new(1.0, 1.0).unwrap();
        assert_eq!(s.eta(0), 1.0);
        let w = Vector::from_vec(vec![1.0, -2.0]);
        assert_eq!(apply_update(&w, 3, &s, &Vector::zeros(2)), w);
        assert!(StepSchedule::new(1.0, 0.0).is_err());
        assert!(StepSchedule::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn full_gradient_step_descends_on_scalar_quadratic() {
        let task = LearningTask::quadratic(vec![scalar_device(2.0, &[1.0])]).unwrap();
        // eta = 0.9 < 2 / smoothness = 1.
        let s = StepSchedule::new(0.9, 1.0).unwrap();
        let mut w = Vector::from_element(1, 5.0);
        for t in 0..5 {
            let next = apply_update(&w, t, &s, &task.gradient(&w));
            assert!(task.loss(&next) < task.loss(&w));
            w = next;
        }
    }
}
