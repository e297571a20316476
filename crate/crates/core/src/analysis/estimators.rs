//! Trajectory-based estimators.

use crate::error::{Error, Result};

/// Minimum number of points per batch.
pub const MIN_BATCH_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMeans {
    /// Estimate of the asymptotic variance of `n^{-1/2} sum f(X_k)`.
    pub estimate: f64,
    pub standard_error: f64,
    pub batch_len: usize,
}

/// Non-overlapping batch means. Leading points that do not fill a batch are
/// dropped.
pub fn batch_means_variance(values: &[f64], batches: usize) -> Result<BatchMeans> {
    if batches < 2 {
        return Err(Error::InvalidParameter("batch means needs at least 2 batches".into()));
    }
    let m = values.len() / batches;
    if m < MIN_BATCH_LEN {
        return Err(Error::InvalidParameter(format!(
            "{} points give batches of {m} < {MIN_BATCH_LEN} points",
            values.len()
        )));
    }
    let start = values.len() - m * batches;
    let means: Vec<f64> = values[start..].chunks_exact(m).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let (var, _) = sample_variance_with_se(&means);
    let estimate = m as f64 * var;
    Ok(BatchMeans { estimate, standard_error: estimate * (2.0 / (batches - 1) as f64).sqrt(), batch_len: m })
}

/// Unbiased sample variance and its standard error from the fourth central moment.
pub fn sample_variance_with_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n < 2 {
        return (0.0, f64::INFINITY);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d2 = (v - mean).powi(2);
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / (n - 1) as f64;
    let (m2, m4) = (m2 / n as f64, m4 / n as f64);
    (var, ((m4 - m2 * m2).max(0.0) / n as f64).sqrt())
}

/// Mean and standard error of the mean.
pub fn mean_with_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (var, _) = sample_variance_with_se(values);
    (mean, (var / n).sqrt())
}
