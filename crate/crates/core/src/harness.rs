//! Parameter scans over `(N, gamma)` with seeded trials and power-law fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linear_forms::FormFamily;
use crate::operator::{bilinear_norm_exact, maximal_norm_lower, op_norm_lower, MultilinearInstance};
use crate::random_matrix::{sample_matrix, MatrixModel, SPECTRAL_STEPS, SPECTRAL_TOL};
use crate::random_measure::{sample_r, SelectorModel};
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::{least_squares, median, LineFit, MeanEstimate};
use crate::{Error, Result};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "MULTIFORM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `sup |r^|` of the one-dimensional kernel.
    BilinearExact,
    /// Alternating ascent lower bound on `||T||_op`.
    Ascent,
    /// Ascent lower bound on `||T*||_op`.
    Maximal,
    /// Spectral norm of the fully independent matrix.
    MatrixSpectral,
}

fn default_density() -> f64 {
    0.5
}
fn default_window() -> i64 {
    1
}
fn default_restarts() -> usize {
    20
}
fn default_iters() -> usize {
    100
}
fn default_oversample() -> usize {
    8
}
fn default_xi_factor() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub n_list: Vec<u64>,
    pub gamma_list: Vec<f64>,
    /// `p = density * N^{-gamma}`.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Degree used for the reference thresholds; read from `family` when present.
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default = "default_window")]
    pub window_a: i64,
    pub trials: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_iters")]
    pub iters: usize,
    pub seed: u64,
    pub estimator: Estimator,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    /// Frequency grid of the maximal estimator is `xi_factor * A * N`.
    #[serde(default = "default_xi_factor")]
    pub xi_factor: usize,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<Option<FormFamily>> {
        if self.n_list.is_empty() || self.gamma_list.is_empty() {
            return Err(Error::InvalidParameter("empty N or gamma list".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) || self.n_list[0] == 0 {
            return Err(Error::InvalidParameter("N list must be positive and strictly increasing".into()));
        }
        if self.trials < 10 {
            return Err(Error::InvalidParameter(format!("{} trials, need at least 10", self.trials)));
        }
        if self.gamma_list.iter().any(|g| !(*g >= 0.0 && *g < 1.0)) {
            return Err(Error::InvalidParameter("gamma outside [0, 1)".into()));
        }
        match self.estimator {
            Estimator::Ascent | Estimator::Maximal => {
                let text = self
                    .family
                    .as_deref()
                    .ok_or_else(|| Error::InvalidParameter("this estimator needs a family".into()))?;
                let family: FormFamily = text.parse()?;
                if self.estimator == Estimator::Ascent && family.degree() == 0 {
                    return Err(Error::InvalidParameter("ascent needs M >= 1".into()));
                }
                Ok(Some(family))
            }
            Estimator::BilinearExact | Estimator::MatrixSpectral => Ok(None),
        }
    }

    fn degree(&self, family: Option<&FormFamily>) -> usize {
        family.map_or(self.m, FormFamily::degree)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub n: u64,
    pub gamma: f64,
    pub p: f64,
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub fit: LineFit,
    /// Values of `N` dropped because their mean was not positive.
    pub excluded: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaFit {
    pub gamma: f64,
    /// `None` when fewer than three usable `N` remain.
    pub fit: Option<ExponentFit>,
    pub note: Option<String>,
    /// `-(1 - gamma) / 2`.
    pub reference_slope: f64,
    pub below_two_pow_neg_m: bool,
    pub below_two_pow_neg_m_minus_one: bool,
    /// Fitted slope negative with the whole confidence interval below zero.
    pub decays: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub config: ScanConfig,
    pub rows: Vec<ScanRow>,
    pub fits: Vec<GammaFit>,
    pub warnings: Vec<String>,
}

impl ScanResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,gamma,p,mean,stderr,median,trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.12e},{:.12e},{:.12e},{}\n",
                r.n, r.gamma, r.p, r.mean, r.stderr, r.median, r.trials
            ));
        }
        out
    }

    /// `(gamma, log2 N, log2 mean)` for rows with positive mean.
    pub fn plot_data(&self) -> Vec<(f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.mean > 0.0)
            .map(|r| (r.gamma, (r.n as f64).log2(), r.mean.log2()))
            .collect()
    }
}

/// Least squares of `log2 mean` on `log2 N`, dropping nonpositive means.
pub fn fit_exponent(points: &[(u64, f64)]) -> Result<ExponentFit> {
    let excluded: Vec<u64> = points.iter().filter(|(_, m)| m.is_nan() || *m <= 0.0).map(|(n, _)| *n).collect();
    let usable: Vec<&(u64, f64)> = points.iter().filter(|(_, m)| *m > 0.0).collect();
    let xs: Vec<f64> = usable.iter().map(|(n, _)| (*n as f64).log2()).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, m)| m.log2()).collect();
    Ok(ExponentFit { fit: least_squares(&xs, &ys)?, excluded })
}

fn one_trial(cfg: &ScanConfig, family: Option<&FormFamily>, n: u64, p: f64, cell: u64, trial: u64) -> Result<f64> {
    let kernel_stream = stream_id(&[purpose::KERNEL, cell, trial]);
    let restart_seed = stream_id(&[cfg.seed, purpose::RESTART, cell, trial]);
    match cfg.estimator {
        Estimator::BilinearExact => {
            let r = sample_r(&SelectorModel::new(n, p, cfg.seed, kernel_stream)?);
            Ok(bilinear_norm_exact(&r, cfg.oversample)?.value)
        }
        Estimator::Ascent | Estimator::Maximal => {
            let family = family.expect("validated").clone();
            let r = sample_r(&SelectorModel::new(n, p, cfg.seed, kernel_stream)?);
            let inst = MultilinearInstance::new(family, r, cfg.window_a, n as i64)?;
            if cfg.estimator == Estimator::Ascent {
                Ok(op_norm_lower(&inst, cfg.restarts, cfg.iters, restart_seed)?.value)
            } else {
                let grid = cfg.xi_factor.max(4) * cfg.window_a as usize * n as usize;
                Ok(maximal_norm_lower(&inst, grid.max(inst.side()), cfg.restarts, cfg.iters, restart_seed)?.value)
            }
        }
        Estimator::MatrixSpectral => {
            let sample = sample_matrix(&MatrixModel::new(n, p, cfg.seed, stream_id(&[purpose::MATRIX, cell, trial]))?);
            let mut rng = stream_rng(restart_seed, 0);
            Ok(sample.spectral_norm(SPECTRAL_STEPS, SPECTRAL_TOL, &mut rng).sigma)
        }
    }
}

fn scan_cells(cfg: &ScanConfig, family: Option<&FormFamily>) -> Result<ScanResult> {
    let mut cells = Vec::new();
    for &gamma in &cfg.gamma_list {
        for &n in &cfg.n_list {
            cells.push((gamma, n));
        }
    }
    let rows: Vec<ScanRow> = cells
        .par_iter()
        .enumerate()
        .map(|(cell, &(gamma, n))| {
            let p = crate::random_measure::density_for(n, gamma, cfg.density)?;
            let values: Vec<f64> = (0..cfg.trials as u64)
                .into_par_iter()
                .map(|t| one_trial(cfg, family, n, p, cell as u64, t))
                .collect::<Result<_>>()?;
            let est = MeanEstimate::from_samples(&values);
            Ok(ScanRow { n, gamma, p, mean: est.mean, stderr: est.stderr, median: median(&values), trials: cfg.trials })
        })
        .collect::<Result<_>>()?;
    let m = cfg.degree(family);
    let mut warnings = Vec::new();
    let fits = cfg
        .gamma_list
        .iter()
        .map(|&gamma| {
            let points: Vec<(u64, f64)> = rows.iter().filter(|r| r.gamma == gamma).map(|r| (r.n, r.mean)).collect();
            let (fit, note) = match fit_exponent(&points) {
                Ok(f) => {
                    if !f.excluded.is_empty() {
                        warnings.push(format!("gamma {gamma}: nonpositive means at N = {:?} excluded", f.excluded));
                    }
                    (Some(f), None)
                }
                Err(e) => (None, Some(format!("slope undefined: {e}"))),
            };
            let decays = fit.as_ref().map(|f| f.fit.slope < 0.0 && f.fit.ci_high < 0.0);
            GammaFit {
                gamma,
                reference_slope: -(1.0 - gamma) / 2.0,
                below_two_pow_neg_m: gamma < 2f64.powi(-(m as i32)),
                below_two_pow_neg_m_minus_one: gamma < 2f64.powi(-(m as i32) - 1),
                decays,
                fit,
                note,
            }
        })
        .collect();
    Ok(ScanResult { config: cfg.clone(), rows, fits, warnings })
}

/// Runs every `(gamma, N)` cell with trial streams keyed by `(cell, trial)`, so
/// the result is independent of the worker count.
pub fn run_scan(cfg: &ScanConfig) -> Result<ScanResult> {
    let family = cfg.validate()?;
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&t| t > 0);
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(|| scan_cells(cfg, family.as_ref())),
        None => scan_cells(cfg, family.as_ref()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(estimator: Estimator, n_list: Vec<u64>) -> ScanConfig {
        ScanConfig {
            n_list,
            gamma_list: vec![0.0],
            density: 0.5,
            m: 1,
            family: None,
            window_a: 1,
            trials: 10,
            restarts: 2,
            iters: 20,
            seed: 9,
            estimator,
            oversample: 8,
            xi_factor: 8,
        }
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(u64, f64)> = [16u64, 32, 64, 128].iter().map(|&n| (n, (n as f64).powf(-0.5))).collect();
        let f = fit_exponent(&pts).unwrap();
        assert!((f.fit.slope + 0.5).abs() < 1e-12);
        assert!(f.fit.slope_stderr < 1e-12);
        let flat: Vec<(u64, f64)> = [16u64, 32, 64].iter().map(|&n| (n, 3.0)).collect();
        assert!(fit_exponent(&flat).unwrap().fit.slope.abs() < 1e-12);
    }

    #[test]
    fn nonpositive_means_are_excluded() {
        let f = fit_exponent(&[(8, 0.0), (16, 1.0), (32, 0.5), (64, 0.25)]).unwrap();
        assert_eq!(f.excluded, vec![8]);
        assert!((f.fit.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_n_has_undefined_slope() {
        let res = run_scan(&config(Estimator::BilinearExact, vec![32])).unwrap();
        assert!(res.fits[0].fit.is_none());
        assert!(res.fits[0].note.as_deref().unwrap().contains("undefined"));
    }

    #[test]
    fn identical_seeds_identical_results() {
        let cfg = config(Estimator::BilinearExact, vec![16, 32, 64]);
        assert_eq!(run_scan(&cfg).unwrap(), run_scan(&cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(run_scan(&config(Estimator::BilinearExact, vec![32, 16, 64])).is_err());
        let mut few = config(Estimator::BilinearExact, vec![16, 32, 64]);
        few.trials = 5;
        assert!(run_scan(&few).is_err());
        assert!(run_scan(&config(Estimator::Ascent, vec![4, 8, 16])).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let text = r#"{"n_list":[4,8,16],"gamma_list":[0.0,0.25],"trials":10,"seed":1,
            "estimator":"ascent","family":"1,-1; 1,1"}"#;
        let cfg: ScanConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.restarts, 20);
        assert_eq!(cfg.estimator, Estimator::Ascent);
        let back: ScanConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn ascent_scan_runs() {
        let mut cfg = config(Estimator::Ascent, vec![4, 8, 16]);
        cfg.family = Some("1,-1; 1,1".into());
        let res = run_scan(&cfg).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert!(res.rows.iter().all(|r| r.mean > 0.0));
        assert!(res.fits[0].fit.is_some());
        assert!(res.fits[0].below_two_pow_neg_m);
    }
}
