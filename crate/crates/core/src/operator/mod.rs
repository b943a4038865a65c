//! The multilinear operators `T(f, g_1..g_M)(x) = sum_y f(y) k(L_0(x,y)) prod_j g_j(L_j(x,y))`
//! and scalar forms `sum_{x,y} k(L_0(x,y)) prod_j f_j(L_j(x,y))` on a square window.
//!
//! Forms taking a non-integer value contribute a factor of zero.

pub mod bilinear;
pub mod maximal;
pub mod norms;

use std::ops::{AddAssign, Mul};

use num_complex::Complex64;
use serde::Serialize;

use crate::linalg::{ComplexMatrix, DenseMatrix};
use crate::linear_forms::{FamilyKind, FormFamily};
use crate::random_measure::SignedMeasure;
use crate::{Error, Result};

pub use bilinear::{bilinear_norm_exact, BilinearNorm};
pub use maximal::{maximal_norm_lower, maximal_value, MaximalEstimate};
pub use norms::{op_norm_bruteforce, op_norm_lower, BruteForceNorm, NormEstimate, BRUTE_FORCE_CAP_BITS};

/// Field of values a [`FunctionVec`] may hold.
pub trait Scalar:
    Copy + Default + Send + Sync + PartialEq + AddAssign + Mul<Output = Self> + Mul<f64, Output = Self> + 'static
{
    fn one() -> Self;
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    fn one() -> Self {
        1.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Dense function on `[-W, W]`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionVec<T = f64> {
    half_width: i64,
    values: Vec<T>,
}

impl<T: Scalar> FunctionVec<T> {
    pub fn new(half_width: i64, values: Vec<T>) -> Result<Self> {
        if half_width < 0 || values.len() as i64 != 2 * half_width + 1 {
            return Err(Error::Window(format!("{} values for half-width {half_width}", values.len())));
        }
        if values.iter().any(|v| !v.magnitude().is_finite()) {
            return Err(Error::InvalidParameter("non-finite function value".into()));
        }
        Ok(Self { half_width, values })
    }

    pub fn zeros(half_width: i64) -> Self {
        Self::constant(half_width, T::default())
    }

    pub fn constant(half_width: i64, value: T) -> Self {
        Self { half_width, values: vec![value; (2 * half_width + 1) as usize] }
    }

    pub fn from_fn(half_width: i64, f: impl FnMut(i64) -> T) -> Self {
        Self { half_width, values: (-half_width..=half_width).map(f).collect() }
    }

    pub fn delta(half_width: i64, at: i64, value: T) -> Self {
        Self::from_fn(half_width, |x| if x == at { value } else { T::default() })
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: i64) -> T {
        if x.abs() > self.half_width {
            T::default()
        } else {
            self.values[(x + self.half_width) as usize]
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v.magnitude().powi(2)).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().map(|v| v.magnitude()).fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.magnitude()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { half_width: self.half_width, values: self.values.iter().map(|&v| v * c).collect() }
    }
}

impl FunctionVec<f64> {
    pub fn to_complex(&self) -> FunctionVec<Complex64> {
        FunctionVec {
            half_width: self.half_width,
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// Kernel, form family and window `[-A N, A N]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultilinearInstance {
    family: FormFamily,
    kernel: SignedMeasure,
    window_a: i64,
    n: i64,
}

impl MultilinearInstance {
    /// Instance for the operator `T`; every form must avoid the coordinate axes.
    pub fn new(family: FormFamily, kernel: SignedMeasure, window_a: i64, n: i64) -> Result<Self> {
        Self::with_kind(family, kernel, window_a, n, FamilyKind::Operator)
    }

    /// Instance for scalar forms; only pairwise non-proportionality is required.
    pub fn scalar(family: FormFamily, kernel: SignedMeasure, window_a: i64, n: i64) -> Result<Self> {
        Self::with_kind(family, kernel, window_a, n, FamilyKind::Scalar)
    }

    fn with_kind(family: FormFamily, kernel: SignedMeasure, window_a: i64, n: i64, kind: FamilyKind) -> Result<Self> {
        if window_a < 1 || n < 1 {
            return Err(Error::Window(format!("A = {window_a}, N = {n}")));
        }
        family.validate(kind).map_err(Error::Family)?;
        let w = window_a * n;
        let reach = family.kernel().range_half_width(w, w);
        if let Some((lo, hi)) = kernel.support_range() {
            if lo < -reach.max(w) || hi > reach.max(w) {
                return Err(Error::Window(format!("kernel support [{lo}, {hi}] outside the window")));
            }
        }
        Ok(Self { family, kernel, window_a, n })
    }

    pub fn family(&self) -> &FormFamily {
        &self.family
    }

    pub fn kernel(&self) -> &SignedMeasure {
        &self.kernel
    }

    pub fn window_a(&self) -> i64 {
        self.window_a
    }

    pub fn n(&self) -> i64 {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.family.degree()
    }

    /// `W = A N`.
    pub fn half_width(&self) -> i64 {
        self.window_a * self.n
    }

    pub fn side(&self) -> usize {
        (2 * self.half_width() + 1) as usize
    }

    /// Half-width of the window on which `g_j` is read.
    pub fn slot_half_width(&self, j: usize) -> i64 {
        let w = self.half_width();
        self.family.slots()[j].range_half_width(w, w)
    }

    pub fn with_kernel(&self, kernel: SignedMeasure) -> Result<Self> {
        let kind = if self.family.validate(FamilyKind::Operator).is_ok() {
            FamilyKind::Operator
        } else {
            FamilyKind::Scalar
        };
        Self::with_kind(self.family.clone(), kernel, self.window_a, self.n, kind)
    }

    fn check_arity<T>(&self, gs: &[FunctionVec<T>]) -> Result<()> {
        if gs.len() != self.degree() {
            return Err(Error::Arity { expected: self.degree(), got: gs.len() });
        }
        Ok(())
    }
}

/// `T(f, g_1, ..., g_M)` on `[-W, W]`.
pub fn apply_t<T: Scalar>(inst: &MultilinearInstance, f: &FunctionVec<T>, gs: &[FunctionVec<T>]) -> Result<FunctionVec<T>> {
    inst.check_arity(gs)?;
    let w = inst.half_width();
    let l0 = inst.family.kernel();
    let slots = inst.family.slots();
    Ok(FunctionVec::from_fn(w, |x| {
        let mut acc = T::default();
        for y in -w..=w {
            let fy = f.get(y);
            if fy == T::default() {
                continue;
            }
            let Some(k) = l0.at(x, y).map(|t| inst.kernel.get(t)).filter(|k| *k != 0.0) else {
                continue;
            };
            let mut term = fy * k;
            for (l, g) in slots.iter().zip(gs) {
                match l.at(x, y) {
                    Some(t) => term = term * g.get(t),
                    None => {
                        term = T::default();
                        break;
                    }
                }
            }
            acc += term;
        }
        acc
    }))
}

/// `sum_{(x,y) in [-W,W]^2} k(L_0(x,y)) prod_j f_j(L_j(x,y))`.
pub fn scalar_form(inst: &MultilinearInstance, fs: &[FunctionVec<f64>]) -> Result<f64> {
    inst.check_arity(fs)?;
    let w = inst.half_width();
    let l0 = inst.family.kernel();
    let slots = inst.family.slots();
    let mut acc = crate::stats::CompensatedSum::new();
    for x in -w..=w {
        for y in -w..=w {
            let Some(k) = l0.at(x, y).map(|t| inst.kernel.get(t)).filter(|k| *k != 0.0) else {
                continue;
            };
            let mut term = k;
            for (l, f) in slots.iter().zip(fs) {
                term *= l.at(x, y).map_or(0.0, |t| f.get(t));
                if term == 0.0 {
                    break;
                }
            }
            acc.add(term);
        }
    }
    Ok(acc.value())
}

const NO_INDEX: u32 = u32::MAX;

/// Precomputed kernel values and slot indices over the window, row `x`, column `y`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub side: usize,
    pub half_width: i64,
    pub kvals: Vec<f64>,
    pub slot_len: Vec<usize>,
    pub slot_idx: Vec<Vec<u32>>,
}

impl Layout {
    pub fn new(inst: &MultilinearInstance) -> Self {
        let w = inst.half_width();
        let side = inst.side();
        let l0 = inst.family.kernel();
        let slots = inst.family.slots();
        let reach: Vec<i64> = (0..slots.len()).map(|j| inst.slot_half_width(j)).collect();
        let mut kvals = vec![0.0; side * side];
        let mut slot_idx = vec![vec![NO_INDEX; side * side]; slots.len()];
        for (i, x) in (-w..=w).enumerate() {
            for (j, y) in (-w..=w).enumerate() {
                let pos = i * side + j;
                let mut k = l0.at(x, y).map_or(0.0, |t| inst.kernel.get(t));
                for (s, l) in slots.iter().enumerate() {
                    match l.at(x, y) {
                        Some(t) => slot_idx[s][pos] = (t + reach[s]) as u32,
                        None => k = 0.0,
                    }
                }
                kvals[pos] = k;
            }
        }
        let slot_len = reach.iter().map(|r| (2 * r + 1) as usize).collect();
        Self { side, half_width: w, kvals, slot_len, slot_idx }
    }

    pub fn degree(&self) -> usize {
        self.slot_len.len()
    }

    /// Product of the slot values at `pos`, skipping slot `skip`.
    #[inline]
    pub fn slot_product<T: Scalar>(&self, gs: &[Vec<T>], pos: usize, skip: Option<usize>) -> T {
        let mut prod: Option<T> = None;
        for (s, g) in gs.iter().enumerate() {
            if Some(s) == skip {
                continue;
            }
            let v = g[self.slot_idx[s][pos] as usize];
            prod = Some(match prod {
                None => v,
                Some(p) => p * v,
            });
        }
        prod.unwrap_or_else(T::one)
    }

    pub fn real_matrix(&self, gs: &[Vec<f64>]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.side, self.side);
        for (pos, v) in m.data_mut().iter_mut().enumerate() {
            let k = self.kvals[pos];
            if k != 0.0 {
                *v = k * self.slot_product(gs, pos, None);
            }
        }
        m
    }

    pub fn complex_matrix(&self, gs: &[Vec<Complex64>]) -> ComplexMatrix {
        let data = (0..self.side * self.side)
            .map(|pos| {
                let k = self.kvals[pos];
                if k == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    self.slot_product(gs, pos, None) * k
                }
            })
            .collect();
        ComplexMatrix { rows: self.side, cols: self.side, data }
    }
}

/// FNV-1a digest of a witness, with `f` rounded to nine decimals.
pub fn witness_hash(f: &[f64], gs: &[Vec<f64>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for v in f {
        eat(&((v * 1e9).round() as i64).to_le_bytes());
    }
    for g in gs {
        eat(&[0xff]);
        for v in g {
            eat(&((v * 1e9).round() as i64).to_le_bytes());
        }
    }
    h
}
