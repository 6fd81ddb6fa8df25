//! Order statistics over run outcomes. Infinite values stand for runs that
//! never reached the target and sort last.

use serde::{Deserialize, Serialize};

/// Linearly interpolated quantile of sorted data (the "type 7" rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else if sorted[hi].is_infinite() {
        sorted[hi]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Median and interquartile range; `None` marks an infinite statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            median: finite(quantile(&v, 0.5)),
            q1: finite(quantile(&v, 0.25)),
            q3: finite(quantile(&v, 0.75)),
        }
    }

    pub fn median_or_inf(&self) -> f64 {
        self.median.unwrap_or(f64::INFINITY)
    }
}
