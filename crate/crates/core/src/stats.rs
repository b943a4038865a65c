//! Small statistics helpers shared by the Monte Carlo paths.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Sample mean with its standard error (sample standard deviation / sqrt(n)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, count };
        }
        let mean = samples.iter().copied().collect::<CompensatedSum>().value() / count as f64;
        if count < 2 {
            return Self { mean, stderr: 0.0, count };
        }
        let ss = samples
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .collect::<CompensatedSum>()
            .value();
        let sd = (ss / (count - 1) as f64).sqrt();
        Self { mean, stderr: sd / (count as f64).sqrt(), count }
    }

    /// Standardised distance of `target` from the mean. Zero when both the
    /// spread and the difference vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if self.stderr == 0.0 {
            if diff.abs() <= 1e-12 * target.abs().max(1e-300) {
                0.0
            } else {
                f64::INFINITY * diff.signum()
            }
        } else {
            diff / self.stderr
        }
    }
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Ordinary least squares line with a 95% confidence interval on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

impl LineFit {
    pub fn contains(&self, slope: f64) -> bool {
        self.ci_low <= slope && slope <= self.ci_high
    }
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter("x and y lengths differ".into()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} points, need at least 3")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let dof = nf - 2.0;
    let slope_stderr = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        ci_low: slope - t * slope_stderr,
        ci_high: slope + t * slope_stderr,
        points: n,
    })
}
