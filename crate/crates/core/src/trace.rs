//! Exact expected trace moments by enumeration, with Monte Carlo counterparts.
//!
//! For `L f(x) = sum_y f(y) r(x - y) h(x, y)` on `[-N, N]`,
//! `trace (L^T L)^q = sum_n H(n) prod_i r(m_i(n))` over `n in [-N, N]^{2q}`,
//! where `m = (n_2 - n_1, n_2 - n_3, n_4 - n_3, ..., n_2q - n_1)` and
//! `H(n) = prod_i h(n_2i, n_2i-1) h(n_2i, n_2i+1)`. Distinct values of `r` are
//! independent, so the expectation factorises over the distinct entries of `m`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::{Bernoulli, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::random_measure::{r_moment, sample_r, SelectorModel};
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::{CompensatedSum, MeanEstimate};
use crate::{Error, Result};

/// Largest number of tuples any exact enumeration may visit.
pub const ENUMERATION_GUARD: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceConfig {
    pub n: u64,
    pub p: f64,
    pub q: u32,
    /// Row-major weights `h(x, y)` on `[-N, N]^2`; `None` means `h = 1`.
    #[serde(skip)]
    pub h: Option<Vec<f64>>,
}

impl TraceConfig {
    pub fn new(n: u64, p: f64, q: u32) -> Result<Self> {
        let cfg = Self { n, p, q, h: None };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn with_weights(mut self, h: Vec<f64>) -> Result<Self> {
        let side = self.side();
        if h.len() != side * side {
            return Err(Error::InvalidParameter(format!("{} weights for a {side}x{side} window", h.len())));
        }
        self.h = Some(h);
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidParameter("q must be positive".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!("p = {}", self.p)));
        }
        check_guard(self.side(), self.q)
    }

    fn side(&self) -> usize {
        (2 * self.n + 1) as usize
    }

    #[inline]
    fn weight(&self, x: i64, y: i64) -> f64 {
        match &self.h {
            None => 1.0,
            Some(h) => {
                let n = self.n as i64;
                h[((x + n) as usize) * self.side() + (y + n) as usize]
            }
        }
    }
}

fn check_guard(side: usize, q: u32) -> Result<()> {
    let count = (side as f64).powi(2 * q as i32);
    if count > ENUMERATION_GUARD {
        return Err(Error::TooLarge(format!("{count:.3e} tuples")));
    }
    Ok(())
}

/// `m = (n_2 - n_1, n_2 - n_3, n_4 - n_3, ..., n_2q - n_1)`.
pub fn m_vector(n: &[i64]) -> Vec<i64> {
    let len = n.len();
    (0..len)
        .map(|i| {
            let next = n[(i + 1) % len];
            if i % 2 == 0 {
                next - n[i]
            } else {
                n[i] - next
            }
        })
        .collect()
}

/// Multiplicities of the distinct values of `values`, in increasing value order.
fn multiplicities(values: &[i64]) -> Vec<(i64, u32)> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(i64, u32)> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some((last, c)) if *last == v => *c += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// No entry of the difference vector occurs exactly once.
pub fn is_admissible(n: &[i64]) -> bool {
    multiplicities(&m_vector(n)).iter().all(|&(_, c)| c != 1)
}

/// Calls `visit` for every tuple in `[-N, N]^len` whose first entry is `first`.
fn for_each_tuple(n: i64, len: usize, first: i64, mut visit: impl FnMut(&[i64])) {
    let mut t = vec![-n; len];
    t[0] = first;
    loop {
        visit(&t);
        let mut i = len - 1;
        loop {
            if i == 0 {
                return;
            }
            if t[i] < n {
                t[i] += 1;
                break;
            }
            t[i] = -n;
            i -= 1;
        }
    }
}

/// `E trace (L^T L)^q` summed over admissible tuples with exact moments of `r`.
pub fn expected_trace_exact(cfg: &TraceConfig) -> Result<f64> {
    cfg.check()?;
    let n = cfg.n as i64;
    let len = 2 * cfg.q as usize;
    let moments: Vec<f64> = (0..=len as u32).map(|k| if k == 0 { 1.0 } else { r_moment(k, cfg.n, cfg.p) }).collect();
    let partials: Vec<CompensatedSum> = (-n..=n)
        .into_par_iter()
        .map(|first| {
            let mut acc = CompensatedSum::new();
            for_each_tuple(n, len, first, |t| {
                let m = m_vector(t);
                let mut e = 1.0;
                for (v, c) in multiplicities(&m) {
                    if c == 1 || v.abs() > n {
                        return;
                    }
                    e *= moments[c as usize];
                }
                let mut h = 1.0;
                if cfg.h.is_some() {
                    for i in (1..len).step_by(2) {
                        h *= cfg.weight(t[i], t[i - 1]) * cfg.weight(t[i], t[(i + 1) % len]);
                    }
                }
                acc.add(h * e);
            });
            acc
        })
        .collect();
    let mut total = CompensatedSum::new();
    for p in &partials {
        total.merge(p);
    }
    Ok(total.value())
}

/// `trace((K^T K)^q)` for a square matrix.
pub fn trace_power(k: &DMatrix<f64>, q: u32) -> f64 {
    let g = k.transpose() * k;
    let mut acc = g.clone();
    for _ in 1..q {
        acc = &acc * &g;
    }
    acc.trace()
}

fn convolution_matrix(cfg: &TraceConfig, r: &crate::random_measure::SignedMeasure) -> DMatrix<f64> {
    let n = cfg.n as i64;
    let side = cfg.side();
    DMatrix::from_fn(side, side, |i, j| {
        let (x, y) = (i as i64 - n, j as i64 - n);
        r.get(x - y) * cfg.weight(x, y)
    })
}

/// Mean and standard error of `trace((K^T K)^q)` with `K(x, y) = r(x - y) h(x, y)`.
pub fn trace_monte_carlo(cfg: &TraceConfig, trials: usize, seed: u64) -> Result<MeanEstimate> {
    cfg.check()?;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let model = SelectorModel::new(cfg.n, cfg.p, seed, stream_id(&[purpose::TRIAL, t as u64]))?;
            let r = sample_r(&model);
            Ok(trace_power(&convolution_matrix(cfg, &r), cfg.q))
        })
        .collect::<Result<_>>()?;
    Ok(MeanEstimate::from_samples(&samples))
}

/// Per-sample sum over the tuples that are not admissible. Its expectation is
/// zero; the Monte Carlo mean tests that claim.
pub fn non_admissible_monte_carlo(cfg: &TraceConfig, trials: usize, seed: u64) -> Result<MeanEstimate> {
    cfg.check()?;
    let n = cfg.n as i64;
    let len = 2 * cfg.q as usize;
    let mut tuples: Vec<Vec<i64>> = Vec::new();
    for first in -n..=n {
        for_each_tuple(n, len, first, |t| {
            if !is_admissible(t) {
                tuples.push(t.to_vec());
            }
        });
    }
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let model = SelectorModel::new(cfg.n, cfg.p, seed, stream_id(&[purpose::TRIAL, t as u64]))?;
            let r = sample_r(&model);
            let total: CompensatedSum = tuples
                .iter()
                .map(|tuple| {
                    let h: f64 = (1..len)
                        .step_by(2)
                        .map(|i| cfg.weight(tuple[i], tuple[i - 1]) * cfg.weight(tuple[i], tuple[(i + 1) % len]))
                        .product();
                    h * m_vector(tuple).iter().map(|&m| r.get(m)).product::<f64>()
                })
                .collect();
            Ok(total.value())
        })
        .collect::<Result<_>>()?;
    Ok(MeanEstimate::from_samples(&samples))
}

/// `E[(s - p)^k]` for a Bernoulli(`p`) selector.
pub fn centered_bernoulli_moment(k: u32, p: f64) -> f64 {
    p * (1.0 - p).powi(k as i32) + (1.0 - p) * (-p).powi(k as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionCount {
    /// Multiplicities in nonincreasing order.
    pub partition: Vec<u32>,
    pub tuples: u64,
    /// `(2q)! / (prod m_j! prod c_k!) * n^{J+1}` with `c_k` the repeat counts of equal parts.
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixTrace {
    pub exact: f64,
    pub partitions: Vec<PartitionCount>,
    pub counting_bound_holds: bool,
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Number of set partitions of `sum m_j` labelled points into blocks of the given sizes.
fn set_partitions_with_sizes(partition: &[u32]) -> f64 {
    let total: u32 = partition.iter().sum();
    let mut denom: f64 = partition.iter().map(|&m| factorial(m)).product();
    for (_, c) in multiplicities(&partition.iter().map(|&m| m as i64).collect::<Vec<_>>()) {
        denom *= factorial(c);
    }
    factorial(total) / denom
}

/// Exact `E trace((K^T K)^q)` for `K = s - p` with independent entries on
/// `[-N, N]^2`, by enumeration of the cycles `(x_1, y_1, ..., x_q, y_q)`.
/// Factors are `K(x_i, y_i)` and `K(x_{i+1}, y_i)`.
pub fn matrix_trace_exact(n: u64, p: f64, q: u32) -> Result<MatrixTrace> {
    if q == 0 || !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("q = {q}, p = {p}")));
    }
    let side = (2 * n + 1) as usize;
    check_guard(side, q)?;
    let n = n as i64;
    let len = 2 * q as usize;
    let moments: Vec<f64> = (0..=len as u32).map(|k| centered_bernoulli_moment(k, p)).collect();
    let partials: Vec<(CompensatedSum, BTreeMap<Vec<u32>, u64>)> = (-n..=n)
        .into_par_iter()
        .map(|first| {
            let mut acc = CompensatedSum::new();
            let mut hist: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
            let side = side as i64;
            for_each_tuple(n, len, first, |t| {
                // t = (x_1, y_1, x_2, y_2, ...); encode pairs as integers
                let keys: Vec<i64> = (0..q as usize)
                    .flat_map(|i| {
                        let (x, y, xn) = (t[2 * i], t[2 * i + 1], t[(2 * i + 2) % len]);
                        [(x + n) * side + (y + n), (xn + n) * side + (y + n)]
                    })
                    .collect();
                let mult = multiplicities(&keys);
                let mut partition: Vec<u32> = mult.iter().map(|&(_, c)| c).collect();
                partition.sort_unstable_by(|a, b| b.cmp(a));
                if !partition.contains(&1) {
                    acc.add(partition.iter().map(|&c| moments[c as usize]).product());
                }
                *hist.entry(partition).or_insert(0) += 1;
            });
            (acc, hist)
        })
        .collect();
    let mut total = CompensatedSum::new();
    let mut hist: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for (acc, h) in &partials {
        total.merge(acc);
        for (k, v) in h {
            *hist.entry(k.clone()).or_insert(0) += v;
        }
    }
    let partitions: Vec<PartitionCount> = hist
        .into_iter()
        .map(|(partition, tuples)| {
            let bound = set_partitions_with_sizes(&partition) * (side as f64).powi(partition.len() as i32 + 1);
            PartitionCount { within_bound: tuples as f64 <= bound, partition, tuples, bound }
        })
        .collect();
    let counting_bound_holds = partitions.iter().all(|c| c.within_bound);
    Ok(MatrixTrace { exact: total.value(), partitions, counting_bound_holds })
}

/// Mean and standard error of `trace((K^T K)^q)` for sampled `K = s - p`.
pub fn matrix_trace_monte_carlo(n: u64, p: f64, q: u32, trials: usize, seed: u64) -> Result<MeanEstimate> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p}")));
    }
    let side = (2 * n + 1) as usize;
    let bern = Bernoulli::new(p).expect("p in (0, 1]");
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, stream_id(&[purpose::MATRIX, t as u64]));
            let k = DMatrix::from_fn(side, side, |_, _| if bern.sample(&mut rng) { 1.0 - p } else { -p });
            trace_power(&k, q)
        })
        .collect();
    Ok(MeanEstimate::from_samples(&samples))
}
