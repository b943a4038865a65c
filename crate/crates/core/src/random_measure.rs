//! Selector variables and the centered random kernels built from them.
//!
//! `r(x) = (Np)^{-1} s(x) - N^{-1}` on `[-N, N]` is dense, but all of its
//! entries except the selected ones share the value `-1/N`. [`SignedMeasure`]
//! therefore stores a constant background on an interval plus a sparse map of
//! exceptions, which keeps products of shifted copies at `O(Np)` memory.

use std::collections::BTreeMap;

use rand::distr::{Bernoulli, Distribution};
use rand::Rng;
use serde::Serialize;

use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectorModel {
    n: u64,
    p: f64,
    seed: u64,
    stream_id: u64,
}

impl SelectorModel {
    pub fn new(n: u64, p: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!("selection probability {p} outside (0, 1]")));
        }
        if (n as f64) * p < 1.0 {
            return Err(Error::InvalidParameter(format!("N p = {} is below 1", n as f64 * p)));
        }
        Ok(Self { n, p, seed, stream_id })
    }

    /// `p = density * N^{-gamma}`, clamped to `(0, 1]`.
    pub fn from_gamma(n: u64, gamma: f64, density: f64, seed: u64, stream_id: u64) -> Result<Self> {
        Self::new(n, density_for(n, gamma, density)?, seed, stream_id)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn with_stream(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }
}

/// `density * N^{-gamma}` clamped to `(0, 1]`.
pub fn density_for(n: u64, gamma: f64, density: f64) -> Result<f64> {
    if gamma.is_nan() || gamma < 0.0 || density.is_nan() || density <= 0.0 {
        return Err(Error::InvalidParameter(format!("gamma {gamma}, density {density}")));
    }
    let p = density * (n as f64).powf(-gamma);
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Background {
    lo: i64,
    hi: i64,
    value: f64,
}

/// Real function on `[-W, W]`: a constant background on an interval, overridden
/// at finitely many points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignedMeasure {
    half_width: i64,
    background: Option<Background>,
    entries: BTreeMap<i64, f64>,
}

impl SignedMeasure {
    pub fn zero(half_width: i64) -> Self {
        Self { half_width, background: None, entries: BTreeMap::new() }
    }

    pub fn from_points(half_width: i64, points: &[(i64, f64)]) -> Result<Self> {
        let mut out = Self::zero(half_width);
        for &(x, v) in points {
            if x.abs() > half_width {
                return Err(Error::Window(format!("point {x} outside [-{half_width}, {half_width}]")));
            }
            if v != 0.0 {
                out.entries.insert(x, v);
            } else {
                out.entries.remove(&x);
            }
        }
        Ok(out)
    }

    /// Dense values on `[lo, lo + len)`; entries equal to `background` are folded
    /// into a background interval.
    pub fn from_dense(half_width: i64, lo: i64, values: &[f64], background: f64) -> Result<Self> {
        if values.is_empty() {
            return Ok(Self::zero(half_width));
        }
        let hi = lo + values.len() as i64 - 1;
        if lo < -half_width || hi > half_width {
            return Err(Error::Window(format!("[{lo}, {hi}] outside [-{half_width}, {half_width}]")));
        }
        let background = (background != 0.0).then_some(Background { lo, hi, value: background });
        let fill = background.map_or(0.0, |b| b.value);
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != fill)
            .map(|(i, &v)| (lo + i as i64, v))
            .collect();
        Ok(Self { half_width, background, entries })
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    #[inline]
    pub fn get(&self, x: i64) -> f64 {
        if let Some(v) = self.entries.get(&x) {
            return *v;
        }
        match self.background {
            Some(b) if b.lo <= x && x <= b.hi => b.value,
            _ => 0.0,
        }
    }

    /// Smallest interval outside which the measure vanishes.
    pub fn support_range(&self) -> Option<(i64, i64)> {
        let mut range = self.background.map(|b| (b.lo, b.hi));
        for &x in self.entries.keys() {
            range = Some(match range {
                None => (x, x),
                Some((lo, hi)) => (lo.min(x), hi.max(x)),
            });
        }
        range
    }

    /// Number of explicitly stored points.
    pub fn stored_points(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.support_range().is_none() || self.nonzero().next().is_none()
    }

    /// `(x, value)` over the support range, skipping zeros.
    pub fn nonzero(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let (lo, hi) = self.support_range().unwrap_or((1, 0));
        (lo..=hi).map(|x| (x, self.get(x))).filter(|(_, v)| *v != 0.0)
    }

    /// Values on `[-W, W]`.
    pub fn to_dense(&self) -> Vec<f64> {
        (-self.half_width..=self.half_width).map(|x| self.get(x)).collect()
    }

    pub fn sum(&self) -> f64 {
        self.nonzero().map(|(_, v)| v).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.nonzero().map(|(_, v)| v.abs()).sum()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.nonzero().map(|(_, v)| v * v).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.nonzero().map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero(self.half_width);
        }
        Self {
            half_width: self.half_width,
            background: self.background.map(|b| Background { value: b.value * c, ..b }),
            entries: self.entries.iter().map(|(&x, &v)| (x, v * c)).collect(),
        }
    }

    pub fn with_half_width(&self, half_width: i64) -> Result<Self> {
        if let Some((lo, hi)) = self.support_range() {
            if lo < -half_width || hi > half_width {
                return Err(Error::Window(format!("support [{lo}, {hi}] exceeds {half_width}")));
            }
        }
        Ok(Self { half_width, ..self.clone() })
    }

    fn background_value(&self) -> f64 {
        self.background.map_or(0.0, |b| b.value)
    }

    /// `x -> self(x) * other(x + shift)`, stored on `self`'s window.
    pub fn product_with_shift(&self, other: &SignedMeasure, shift: i64) -> SignedMeasure {
        let (Some((alo, ahi)), Some((blo, bhi))) = (self.support_range(), other.support_range()) else {
            return Self::zero(self.half_width);
        };
        let lo = alo.max(blo - shift);
        let hi = ahi.min(bhi - shift);
        if lo > hi {
            return Self::zero(self.half_width);
        }
        let values: Vec<f64> = (lo..=hi).map(|x| self.get(x) * other.get(x + shift)).collect();
        let bg = self.background_value() * other.background_value();
        Self::from_dense(self.half_width, lo, &values, bg).expect("interval inside own support")
    }
}

/// Pairwise distinct integer shifts `z_1, ..., z_K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShiftTuple {
    shifts: Vec<i64>,
}

impl ShiftTuple {
    pub fn new(shifts: Vec<i64>) -> Result<Self> {
        let mut sorted = shifts.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateShift(w[0]));
        }
        if shifts.is_empty() {
            return Err(Error::InvalidParameter("empty shift tuple".into()));
        }
        Ok(Self { shifts })
    }

    pub fn single(z: i64) -> Self {
        Self { shifts: vec![z] }
    }

    pub fn shifts(&self) -> &[i64] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// `{z_i} followed by {z_i + s}`; fails when the union has a collision.
    pub fn doubled(&self, s: i64) -> Result<Self> {
        let mut shifts = self.shifts.clone();
        shifts.extend(self.shifts.iter().map(|z| z + s));
        Self::new(shifts)
    }
}

/// Samples `r` with the model's own seeded stream.
pub fn sample_r(model: &SelectorModel) -> SignedMeasure {
    let mut rng = stream_rng(model.seed, model.stream_id);
    sample_r_with(model, &mut rng)
}

/// Samples `r` drawing selectors from `rng` in order `x = -N, ..., N`.
pub fn sample_r_with<R: Rng + ?Sized>(model: &SelectorModel, rng: &mut R) -> SignedMeasure {
    let n = model.n as i64;
    let nf = model.n as f64;
    let bern = Bernoulli::new(model.p).expect("p validated in (0, 1]");
    let selected_value = 1.0 / (nf * model.p) - 1.0 / nf;
    let background = -1.0 / nf;
    let mut entries = BTreeMap::new();
    for x in -n..=n {
        if bern.sample(rng) {
            entries.insert(x, selected_value);
        }
    }
    if model.p == 1.0 {
        // every selector fires and r vanishes identically
        return SignedMeasure::zero(n);
    }
    SignedMeasure { half_width: n, background: Some(Background { lo: -n, hi: n, value: background }), entries }
}

/// `x -> prod_i r(x + z_i)`, times `N^{K-1}` when `normalized`.
pub fn shifted_product(r: &SignedMeasure, z: &ShiftTuple, normalized: bool, n: u64) -> SignedMeasure {
    let max_shift = z.shifts.iter().map(|s| s.abs()).max().unwrap_or(0);
    let half_width = r.half_width + max_shift;
    let Some((lo, hi)) = r.support_range() else {
        return SignedMeasure::zero(half_width);
    };
    let start = z.shifts.iter().map(|s| lo - s).max().unwrap_or(lo);
    let end = z.shifts.iter().map(|s| hi - s).min().unwrap_or(hi);
    if start > end {
        return SignedMeasure::zero(half_width);
    }
    let k = z.len() as i32;
    let scale = if normalized { (n as f64).powi(k - 1) } else { 1.0 };
    let values: Vec<f64> = (start..=end)
        .map(|x| scale * z.shifts.iter().map(|s| r.get(x + s)).product::<f64>())
        .collect();
    let bg = scale * r.background_value().powi(k);
    SignedMeasure::from_dense(half_width, start, &values, bg).expect("range inside window")
}

/// `E[r(x)^q] = p ((Np)^{-1} - N^{-1})^q + (1 - p)(-N^{-1})^q`.
pub fn r_moment(q: u32, n: u64, p: f64) -> f64 {
    let nf = n as f64;
    let hit = 1.0 / (nf * p) - 1.0 / nf;
    let miss = -1.0 / nf;
    p * hit.powi(q as i32) + (1.0 - p) * miss.powi(q as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    /// Stream whose every draw exceeds any Bernoulli threshold below one.
    struct Saturated;

    impl RngCore for Saturated {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0xff);
        }
    }

    #[test]
    fn model_validation() {
        assert!(SelectorModel::new(10, 0.0, 1, 0).is_err());
        assert!(SelectorModel::new(10, 1.5, 1, 0).is_err());
        assert!(SelectorModel::new(10, 0.05, 1, 0).is_err());
        let m = SelectorModel::from_gamma(100, 0.5, 1.0, 1, 0).unwrap();
        assert!((m.p() - 0.1).abs() < 1e-15);
        assert_eq!(SelectorModel::from_gamma(100, 0.0, 1.0, 1, 0).unwrap().p(), 1.0);
    }

    #[test]
    fn full_selection_gives_zero_kernel() {
        let r = sample_r(&SelectorModel::new(20, 1.0, 3, 0).unwrap());
        assert!(r.to_dense().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_selection_gives_background() {
        let model = SelectorModel::new(8, 0.3, 0, 0).unwrap();
        let r = sample_r_with(&model, &mut Saturated);
        assert_eq!(r.stored_points(), 0);
        assert!(r.to_dense().iter().all(|&v| v == -1.0 / 8.0));
        assert_eq!(r.get(9), 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = SelectorModel::new(50, 0.2, 99, 4).unwrap();
        assert_eq!(sample_r(&model), sample_r(&model));
        assert_ne!(sample_r(&model), sample_r(&model.with_stream(5)));
    }

    #[test]
    fn l1_bound_per_sample() {
        let model = SelectorModel::new(64, 0.1, 5, 0).unwrap();
        let r = sample_r(&model);
        let hits = r.stored_points() as f64;
        let bound = hits / (64.0 * 0.1) + 129.0 / 64.0;
        assert!(r.l1_norm() <= bound + 1e-12);
    }

    #[test]
    fn moments() {
        assert!(r_moment(1, 17, 0.3).abs() < 1e-15);
        let (n, p) = (17u64, 0.3);
        let nf = n as f64;
        let exact = (nf * p).powi(-2) * p * (1.0 - p);
        assert!((r_moment(2, n, p) - exact).abs() < 1e-15);
        assert!(r_moment(2, n, p) <= (nf * p).powi(-2) * p);
        assert_eq!(r_moment(2, n, 1.0), 0.0);
    }

    #[test]
    fn shift_tuple_rejects_duplicates() {
        assert!(matches!(ShiftTuple::new(vec![1, 2, 1]), Err(Error::DuplicateShift(1))));
        assert_eq!(ShiftTuple::new(vec![0, 3]).unwrap().doubled(1).unwrap().shifts(), &[0, 3, 1, 4]);
        assert!(ShiftTuple::new(vec![0, 3]).unwrap().doubled(3).is_err());
    }

    #[test]
    fn single_shift_product_is_identity() {
        let model = SelectorModel::new(16, 0.25, 1, 0).unwrap();
        let r = sample_r(&model);
        let rho = shifted_product(&r, &ShiftTuple::single(0), false, 16);
        for x in -16..=16 {
            assert_eq!(rho.get(x), r.get(x));
        }
    }

    #[test]
    fn disjoint_shifts_vanish() {
        let model = SelectorModel::new(10, 0.5, 2, 0).unwrap();
        let r = sample_r(&model);
        let rho = shifted_product(&r, &ShiftTuple::new(vec![0, 21]).unwrap(), false, 10);
        assert!(rho.is_zero());
    }

    #[test]
    fn product_support_lies_in_window_intersection() {
        let model = SelectorModel::new(12, 0.3, 8, 0).unwrap();
        let r = sample_r(&model);
        let z = ShiftTuple::new(vec![-3, 5, 1]).unwrap();
        let rho = shifted_product(&r, &z, true, 12);
        for (x, v) in rho.nonzero() {
            assert!(z.shifts().iter().all(|s| (x + s).abs() <= 12));
            let direct = 144.0 * z.shifts().iter().map(|s| r.get(x + s)).product::<f64>();
            assert!((v - direct).abs() <= 1e-12 * direct.abs());
        }
    }

    #[test]
    fn product_with_shift_matches_pointwise() {
        let a = sample_r(&SelectorModel::new(9, 0.4, 1, 1).unwrap());
        let b = sample_r(&SelectorModel::new(9, 0.4, 1, 2).unwrap());
        for s in -20..=20 {
            let c = a.product_with_shift(&b, s);
            for x in -9..=9 {
                assert_eq!(c.get(x), a.get(x) * b.get(x + s));
            }
        }
    }
}
