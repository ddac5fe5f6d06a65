//! Batch-means uncertainty and log-log rate fitting.

use serde::Serialize;

use crate::error::{CirError, Result};

/// Pairwise summation in a fixed tree shape, so the result depends only on
/// the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample standard deviation (`n − 1` denominator); NaN for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&dev) / (xs.len() - 1) as f64).sqrt()
}

/// L1/L2 error estimates with batch-means standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMoments {
    pub l1: f64,
    pub l1_stderr: f64,
    pub l2: f64,
    pub l2_stderr: f64,
}

/// Aggregates per-path absolute errors. `batches` consecutive groups of
/// equal size give the standard errors: the standard deviation of the
/// per-batch L1 (resp. L2) values divided by `√batches`.
pub fn batch_error_moments(abs_errors: &[f64], batches: usize) -> Result<ErrorMoments> {
    let n = abs_errors.len();
    if n == 0 {
        return Err(CirError::InvalidConfig("no samples".into()));
    }
    if batches == 0 || !n.is_multiple_of(batches) {
        return Err(CirError::InvalidConfig(format!(
            "{n} samples cannot be split into {batches} equal batches"
        )));
    }
    let sq: Vec<f64> = abs_errors.iter().map(|e| e * e).collect();
    let l1 = mean(abs_errors);
    let l2 = mean(&sq).sqrt();

    let size = n / batches;
    let batch_l1: Vec<f64> = abs_errors.chunks(size).map(mean).collect();
    let batch_l2: Vec<f64> = sq.chunks(size).map(|c| mean(c).sqrt()).collect();
    let root_b = (batches as f64).sqrt();
    Ok(ErrorMoments {
        l1,
        l1_stderr: sample_std(&batch_l1) / root_b,
        l2,
        l2_stderr: sample_std(&batch_l2) / root_b,
    })
}

/// Least-squares line through `(log₁₀ dt, log₁₀ error)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residuals; NaN with two points.
    pub slope_stderr: f64,
}

pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LineFit> {
    if let Some(&(dt, e)) = points.iter().find(|(dt, e)| !(*dt > 0.0 && *e > 0.0)) {
        return Err(CirError::DegenerateFit(format!(
            "non-positive value in (dt={dt}, error={e})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(dt, _)| dt.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.log10()).collect();
    let n = xs.len();
    let mx = mean(&xs);
    let my = mean(&ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if n < 2 || !(sxx > 0.0) {
        return Err(CirError::DegenerateFit(
            "need at least two distinct step sizes".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (ssr / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
    })
}
