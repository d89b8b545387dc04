//! Ordinary least squares for the calibration line.

use crate::error::{Error, Result};

/// Result of fitting `y = slope·x + intercept` with equal weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1σ standard error of the slope (from the OLS covariance).
    pub slope_se: f64,
    /// 1σ standard error of the intercept.
    pub intercept_se: f64,
    /// Residual variance (RSS / (n − 2)).
    pub residual_var: f64,
    pub n: usize,
}

/// Equal-weight OLS fit with standard parameter errors. Needs at least
/// three points so the residual variance has a degree of freedom.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Fit(format!(
            "mismatched lengths: {} x values, {} y values",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let x_mean = x.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all x values identical".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - x_mean) * (b - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let residual_var = rss / (nf - 2.0);
    let slope_se = (residual_var / sxx).sqrt();
    let intercept_se = (residual_var * (1.0 / nf + x_mean * x_mean / sxx)).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        residual_var,
        n,
    })
}
