//! Fully independent model: selectors `s(x, y)` per pair and the kernel
//! `r(x, y) = (Np)^{-1} (s(x, y) - p)` on `[-N, N]^2`.
//!
//! Families here list only the slot forms `L_1, ..., L_M`; there is no kernel
//! form since `r` is indexed by pairs directly.

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, RngCore};
use rand_distr::Geometric;
use rayon::prelude::*;
use serde::Serialize;

use crate::linalg::{lanczos_top_singular, LanczosResult, LinearOperator};
use crate::linear_forms::{FamilyKind, FormFamily, LinearForm};
use crate::operator::FunctionVec;
use crate::random_measure::density_for;
use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::{least_squares, CompensatedSum, LineFit, MeanEstimate};
use crate::{Error, Result};

/// Windows wider than this are refused by the set enumerations.
pub const WEAK_SIDE_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixModel {
    n: u64,
    p: f64,
    seed: u64,
    stream_id: u64,
}

impl MatrixModel {
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

    pub fn from_gamma(n: u64, gamma: f64, density: f64, seed: u64, stream_id: u64) -> Result<Self> {
        Self::new(n, density_for(n, gamma, density)?, seed, stream_id)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn with_stream(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }

    pub fn side(&self) -> usize {
        (2 * self.n + 1) as usize
    }
}

/// Row-major bitset of a pair set on `[-N, N]^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Bits {
    side: usize,
    words: usize,
    data: Vec<u64>,
}

impl Bits {
    fn new(side: usize) -> Self {
        let words = side.div_ceil(64);
        Self { side, words, data: vec![0; side * words] }
    }

    fn full(side: usize) -> Self {
        let mut b = Self::new(side);
        for i in 0..side {
            for j in 0..side {
                b.set(i, j);
            }
        }
        b
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize) {
        self.data[i * self.words + j / 64] |= 1 << (j % 64);
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    fn transpose(&self) -> Self {
        let mut t = Self::new(self.side);
        for i in 0..self.side {
            for (w, &word) in self.row(i).iter().enumerate() {
                let mut rest = word;
                while rest != 0 {
                    let j = w * 64 + rest.trailing_zeros() as usize;
                    t.set(j, i);
                    rest &= rest - 1;
                }
            }
        }
        t
    }

    fn count(&self) -> u64 {
        self.data.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn count_within(&self, mask: &Bits) -> u64 {
        self.data.iter().zip(&mask.data).map(|(a, b)| (a & b).count_ones() as u64).sum()
    }

    /// `out_i = sum_{j set in row i} x_j` through per-byte partial sums of `x`.
    fn row_sums(&self, x: &[f64], out: &mut [f64]) {
        let nbytes = self.side.div_ceil(8);
        let mut table = vec![0.0; nbytes * 256];
        for c in 0..nbytes {
            let t = &mut table[c * 256..(c + 1) * 256];
            for b in 1..256usize {
                let bit = b.trailing_zeros() as usize;
                let idx = 8 * c + bit;
                t[b] = t[b & (b - 1)] + if idx < self.side { x[idx] } else { 0.0 };
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (w, &word) in self.row(i).iter().enumerate() {
                if word == 0 {
                    continue;
                }
                for k in 0..8 {
                    let byte = (word >> (8 * k)) as usize & 0xff;
                    if byte != 0 {
                        acc += table[(8 * w + k) * 256 + byte];
                    }
                }
            }
            *o = acc;
        }
    }
}

/// A sampled selector matrix with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorMatrix {
    n: u64,
    p: f64,
    rows: Bits,
    cols: Bits,
}

/// Independent Bernoulli(`p`) selector for every pair, drawn in row-major order.
/// `p = 1/2` reads raw bits, small `p` jumps between selected pairs with
/// geometric gaps, anything else draws one Bernoulli per pair.
pub fn sample_matrix(model: &MatrixModel) -> SelectorMatrix {
    let mut rng = stream_rng(model.seed, model.stream_id);
    sample_matrix_with(model, &mut rng)
}

pub fn sample_matrix_with<R: RngCore + ?Sized>(model: &MatrixModel, rng: &mut R) -> SelectorMatrix {
    let side = model.side();
    let mut rows = Bits::new(side);
    let p = model.p;
    if p == 1.0 {
        rows = Bits::full(side);
    } else if p == 0.5 {
        let tail = side % 64;
        for i in 0..side {
            for w in 0..rows.words {
                let mut word = rng.next_u64();
                if w + 1 == rows.words && tail != 0 {
                    word &= (1u64 << tail) - 1;
                }
                rows.data[i * rows.words + w] = word;
            }
        }
    } else if p < 0.3 {
        let geo = Geometric::new(p).expect("p in (0, 1)");
        let total = (side * side) as u64;
        let mut pos = geo.sample(rng);
        while pos < total {
            rows.set((pos / side as u64) as usize, (pos % side as u64) as usize);
            pos = pos.saturating_add(1).saturating_add(geo.sample(rng));
        }
    } else {
        let bern = Bernoulli::new(p).expect("p in (0, 1)");
        for i in 0..side {
            for j in 0..side {
                if bern.sample(rng) {
                    rows.set(i, j);
                }
            }
        }
    }
    let cols = rows.transpose();
    SelectorMatrix { n: model.n, p, rows, cols }
}

impl SelectorMatrix {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn side(&self) -> usize {
        self.rows.side
    }

    fn index(&self, x: i64) -> Option<usize> {
        let n = self.n as i64;
        (-n..=n).contains(&x).then(|| (x + n) as usize)
    }

    pub fn selected(&self, x: i64, y: i64) -> bool {
        match (self.index(x), self.index(y)) {
            (Some(i), Some(j)) => self.rows.get(i, j),
            _ => false,
        }
    }

    /// `r(x, y)`; zero outside the window.
    pub fn r(&self, x: i64, y: i64) -> f64 {
        if self.index(x).is_none() || self.index(y).is_none() || self.p == 1.0 {
            return 0.0;
        }
        let s = if self.selected(x, y) { 1.0 } else { 0.0 };
        (s - self.p) / (self.n as f64 * self.p)
    }

    pub fn selected_count(&self) -> u64 {
        self.rows.count()
    }

    /// Number of selected pairs in each row `x = -N, ..., N`.
    pub fn row_counts(&self) -> Vec<u64> {
        (0..self.side())
            .map(|i| self.rows.row(i).iter().map(|w| w.count_ones() as u64).sum())
            .collect()
    }

    /// `sum_y |r(x, y)|` for a row holding `k` selected pairs.
    pub fn row_abs_sum(&self, k: u64) -> f64 {
        if self.p == 1.0 {
            return 0.0;
        }
        let unselected = self.side() as u64 - k;
        (k as f64 * (1.0 - self.p) + unselected as f64 * self.p) / (self.n as f64 * self.p)
    }

    fn scale(&self) -> f64 {
        1.0 / (self.n as f64 * self.p)
    }

    /// `||r||_{2 -> 2}` by Lanczos on `r^T r`.
    pub fn spectral_norm<R: Rng + ?Sized>(&self, max_steps: usize, tol: f64, rng: &mut R) -> LanczosResult {
        if self.p == 1.0 {
            return LanczosResult { sigma: 0.0, steps: 0, converged: true };
        }
        lanczos_top_singular(self, max_steps, tol, rng)
    }

    /// Dense copy of `r`, row `x`, column `y`.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n as i64;
        nalgebra::DMatrix::from_fn(self.side(), self.side(), |i, j| self.r(i as i64 - n, j as i64 - n))
    }
}

impl LinearOperator for SelectorMatrix {
    fn nrows(&self) -> usize {
        self.side()
    }

    fn ncols(&self) -> usize {
        self.side()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        if self.p == 1.0 {
            out.fill(0.0);
            return;
        }
        self.rows.row_sums(x, out);
        let total: f64 = x.iter().sum();
        let (scale, p) = (self.scale(), self.p);
        out.iter_mut().for_each(|o| *o = scale * (*o - p * total));
    }

    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        if self.p == 1.0 {
            out.fill(0.0);
            return;
        }
        self.cols.row_sums(x, out);
        let total: f64 = x.iter().sum();
        let (scale, p) = (self.scale(), self.p);
        out.iter_mut().for_each(|o| *o = scale * (*o - p * total));
    }
}

fn check_slots(family: &FormFamily, min_degree: usize) -> Result<()> {
    family.validate(FamilyKind::Scalar).map_err(Error::Family)?;
    if family.forms().len() < min_degree {
        return Err(Error::InvalidForm(format!("{} slot forms, need at least {min_degree}", family.forms().len())));
    }
    Ok(())
}

/// `sum_{x, y} r(x, y) prod_j f_j(L_j(x, y))`. Every form of `family` is a slot.
pub fn matrix_form(sample: &SelectorMatrix, family: &FormFamily, fs: &[FunctionVec<f64>]) -> Result<f64> {
    check_slots(family, 2)?;
    if fs.len() != family.forms().len() {
        return Err(Error::Arity { expected: family.forms().len(), got: fs.len() });
    }
    let n = sample.n as i64;
    let mut acc = CompensatedSum::new();
    for x in -n..=n {
        for y in -n..=n {
            let mut term = sample.r(x, y);
            for (l, f) in family.forms().iter().zip(fs) {
                if term == 0.0 {
                    break;
                }
                term *= l.at(x, y).map_or(0.0, |t| f.get(t));
            }
            acc.add(term);
        }
    }
    Ok(acc.value())
}

/// Sets `E_1, ..., E_M` inside `[-N, N]`, stored as bitmasks (bit `t + N`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SetFamily {
    pub half_width: i64,
    pub masks: Vec<u64>,
}

impl SetFamily {
    pub fn new(half_width: i64, sets: &[Vec<i64>]) -> Result<Self> {
        if 2 * half_width + 1 > 64 {
            return Err(Error::TooLarge(format!("window of {} points", 2 * half_width + 1)));
        }
        let masks = sets
            .iter()
            .map(|set| {
                set.iter().try_fold(0u64, |m, &t| {
                    if t.abs() > half_width {
                        Err(Error::Window(format!("{t} outside [-{half_width}, {half_width}]")))
                    } else {
                        Ok(m | 1 << (t + half_width))
                    }
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { half_width, masks })
    }

    pub fn size(&self, j: usize) -> u32 {
        self.masks[j].count_ones()
    }

    pub fn contains(&self, j: usize, t: i64) -> bool {
        t.abs() <= self.half_width && self.masks[j] >> (t + self.half_width) & 1 == 1
    }

    pub fn elements(&self, j: usize) -> Vec<i64> {
        (-self.half_width..=self.half_width).filter(|&t| self.contains(j, t)).collect()
    }

    pub fn indicators(&self) -> Vec<FunctionVec<f64>> {
        (0..self.masks.len())
            .map(|j| FunctionVec::from_fn(self.half_width, |t| if self.contains(j, t) { 1.0 } else { 0.0 }))
            .collect()
    }

    /// `{(x, y) : L_j(x, y) in E_j for all j}`.
    pub fn fiber(&self, family: &FormFamily) -> Vec<(i64, i64)> {
        let n = self.half_width;
        let mut out = Vec::new();
        for x in -n..=n {
            for y in -n..=n {
                let inside = family
                    .forms()
                    .iter()
                    .enumerate()
                    .all(|(j, l)| l.at(x, y).is_some_and(|t| self.contains(j, t)));
                if inside {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Window pairs with their slot indices into `[-N, N]` (`None` outside).
struct PairTable {
    r: Vec<f64>,
    s: Vec<bool>,
    slot: Vec<Vec<Option<usize>>>,
}

impl PairTable {
    fn new(sample: &SelectorMatrix, family: &FormFamily) -> Self {
        let n = sample.n as i64;
        let side = sample.side();
        let mut r = Vec::with_capacity(side * side);
        let mut s = Vec::with_capacity(side * side);
        let mut slot = vec![Vec::with_capacity(side * side); family.forms().len()];
        for x in -n..=n {
            for y in -n..=n {
                r.push(sample.r(x, y));
                s.push(sample.selected(x, y));
                for (j, l) in family.forms().iter().enumerate() {
                    slot[j].push(l.at(x, y).filter(|t| t.abs() <= n).map(|t| (t + n) as usize));
                }
            }
        }
        Self { r, s, slot }
    }

    fn inside(&self, pos: usize, masks: &[u64]) -> bool {
        self.slot
            .iter()
            .zip(masks)
            .all(|(sl, &m)| sl[pos].is_some_and(|t| m >> t & 1 == 1))
    }

    /// `sum over the fiber of w(pos)`.
    fn fiber_sum(&self, masks: &[u64], w: impl Fn(usize) -> f64) -> f64 {
        (0..self.r.len()).filter(|&pos| self.inside(pos, masks)).map(w).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakNorm {
    pub value: f64,
    pub witness: SetFamily,
    /// Tuples of `E_j`, `j != 2`, visited; `E_2` is optimised exactly for each.
    pub tuples: u64,
}

/// Best `|sum_{t in E} c_t| / sqrt(|E|)` over nonempty `E`, with the maximising mask.
/// For a fixed size the extremes are the top or bottom entries of `c`.
fn best_second_set(c: &[f64]) -> (f64, u64) {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    let mut best = (0.0, 1u64 << order[0]);
    let (mut top, mut bottom) = (0.0, 0.0);
    let (mut top_mask, mut bottom_mask) = (0u64, 0u64);
    for k in 0..c.len() {
        let (hi, lo) = (order[k], order[c.len() - 1 - k]);
        top += c[hi];
        bottom += c[lo];
        top_mask |= 1 << hi;
        bottom_mask |= 1 << lo;
        let norm = ((k + 1) as f64).sqrt();
        if top / norm > best.0 {
            best = (top / norm, top_mask);
        }
        if -bottom / norm > best.0 {
            best = (-bottom / norm, bottom_mask);
        }
    }
    best
}

/// `sup |E_1|^{-1/2} |E_2|^{-1/2} |T(E_1, ..., E_M)|` over subsets of `[-N, N]`
/// with `E_1, E_2` nonempty. The `E_j` with `j != 2` are enumerated in Gray-code
/// order with incremental updates of the coefficients `c_t` of `1_{E_2}`; the
/// best `E_2` for given coefficients is found exactly by sorting.
pub fn weak_norm_bruteforce(sample: &SelectorMatrix, family: &FormFamily) -> Result<WeakNorm> {
    check_slots(family, 2)?;
    let m = family.forms().len();
    let side = sample.side();
    if side > WEAK_SIDE_CAP || m > 3 {
        return Err(Error::TooLarge(format!("M = {m} on {side} points, cap is M <= 3 on {WEAK_SIDE_CAP}")));
    }
    let table = PairTable::new(sample, family);
    let n = sample.n as i64;
    let free: Vec<usize> = (0..m).filter(|&j| j != 1).collect();
    let bits: Vec<(usize, usize)> = free.iter().flat_map(|&j| (0..side).map(move |t| (j, t))).collect();
    // positions that read value t through slot j and land in the window for slot 2
    let reads: Vec<Vec<usize>> = bits
        .iter()
        .map(|&(j, t)| {
            (0..table.r.len())
                .filter(|&pos| table.slot[j][pos] == Some(t) && table.slot[1][pos].is_some() && table.r[pos] != 0.0)
                .collect()
        })
        .collect();
    let mut masks = vec![0u64; m];
    let mut c = vec![0.0; side];
    let mut best = WeakNorm { value: 0.0, witness: SetFamily { half_width: n, masks: vec![1; m] }, tuples: 0 };
    let full_free = |masks: &[u64], pos: usize, skip: usize| {
        free.iter()
            .filter(|&&j| j != skip)
            .all(|&j| table.slot[j][pos].is_some_and(|t| masks[j] >> t & 1 == 1))
    };
    let total = 1u64 << bits.len();
    for step in 0..total {
        if step > 0 {
            let bit = step.trailing_zeros() as usize;
            let (j, t) = bits[bit];
            let adding = masks[j] >> t & 1 == 0;
            masks[j] ^= 1 << t;
            for &pos in &reads[bit] {
                if full_free(&masks, pos, j) {
                    let v = table.r[pos];
                    c[table.slot[1][pos].expect("filtered")] += if adding { v } else { -v };
                }
            }
        }
        let e1 = masks[0].count_ones();
        if e1 == 0 {
            continue;
        }
        let (v, e2) = best_second_set(&c);
        let value = v / (e1 as f64).sqrt();
        if value > best.value {
            let mut witness = masks.clone();
            witness[1] = e2;
            best.value = value;
            best.witness = SetFamily { half_width: n, masks: witness };
        }
    }
    best.tuples = total;
    Ok(best)
}

/// Plain enumeration over every tuple including `E_2`; the oracle for
/// [`weak_norm_bruteforce`] at tiny sizes.
pub fn weak_norm_exhaustive(sample: &SelectorMatrix, family: &FormFamily) -> Result<f64> {
    check_slots(family, 2)?;
    let m = family.forms().len();
    let side = sample.side();
    if side * m > 24 {
        return Err(Error::TooLarge(format!("2^{} tuples", side * m)));
    }
    let table = PairTable::new(sample, family);
    let mut best: f64 = 0.0;
    let mut masks = vec![0u64; m];
    for code in 0..1u64 << (side * m) {
        for (j, mask) in masks.iter_mut().enumerate() {
            *mask = code >> (j * side) & ((1 << side) - 1);
        }
        let (e1, e2) = (masks[0].count_ones(), masks[1].count_ones());
        if e1 == 0 || e2 == 0 {
            continue;
        }
        let t = table.fiber_sum(&masks, |pos| table.r[pos]);
        best = best.max(t.abs() / ((e1 * e2) as f64).sqrt());
    }
    Ok(best)
}

/// Pair sets on the window, in the same layout as the selector matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    bits: Bits,
}

impl PairSet {
    pub fn full(n: u64) -> Self {
        Self { bits: Bits::full((2 * n + 1) as usize) }
    }

    pub fn from_pairs(n: u64, pairs: &[(i64, i64)]) -> Result<Self> {
        let side = (2 * n + 1) as usize;
        let ni = n as i64;
        let mut bits = Bits::new(side);
        for &(x, y) in pairs {
            if x.abs() > ni || y.abs() > ni {
                return Err(Error::Window(format!("({x}, {y}) outside the window")));
            }
            bits.set((x + ni) as usize, (y + ni) as usize);
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> u64 {
        self.bits.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub lambda: f64,
    pub empirical: f64,
    pub bound: f64,
    /// `bound + 4 sqrt(b (1 - b) / trials)` with `b = min(bound, 1)`.
    pub allowance: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChernoffReport {
    pub pairs: u64,
    pub sigma: f64,
    pub trials: usize,
    pub mean: MeanEstimate,
    pub variance: f64,
    /// Standard error of the sample variance from the exact fourth moment.
    pub variance_stderr: f64,
    pub rows: Vec<TailRow>,
}

/// `2 exp(-lambda^2 sigma^2 / (2 sigma^2 + (2/3) lambda sigma))`.
pub fn bernstein_bound(lambda: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 2.0;
    }
    2.0 * (-(lambda * lambda * sigma * sigma) / (2.0 * sigma * sigma + 2.0 / 3.0 * lambda * sigma)).exp()
}

/// Tail of `X = sum_{(x, y) in E} (s(x, y) - p)` against the Bernstein bound,
/// with `sigma^2 = |E| p (1 - p)`. Each trial samples a full selector matrix.
pub fn chernoff_tail_check(model: &MatrixModel, set: &PairSet, lambdas: &[f64], trials: usize, seed: u64) -> Result<ChernoffReport> {
    let pairs = set.len();
    if pairs == 0 {
        return Err(Error::InvalidParameter("empty pair set".into()));
    }
    if set.bits.side != model.side() {
        return Err(Error::Window("pair set and model windows differ".into()));
    }
    if trials < 2 {
        return Err(Error::InsufficientData(format!("{trials} trials")));
    }
    let p = model.p;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let m = model.with_stream(stream_id(&[purpose::MATRIX, seed, t as u64]));
            let sample = sample_matrix(&m);
            sample.rows.count_within(&set.bits) as f64 - pairs as f64 * p
        })
        .collect();
    let sigma = (pairs as f64 * p * (1.0 - p)).sqrt();
    let mean = MeanEstimate::from_samples(&samples);
    let variance = samples.iter().map(|x| (x - mean.mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let e = pairs as f64;
    let var1 = p * (1.0 - p);
    let mu4_1 = crate::trace::centered_bernoulli_moment(4, p);
    let mu4 = e * mu4_1 + 3.0 * e * (e - 1.0) * var1 * var1;
    let variance_stderr = ((mu4 - sigma.powi(4)).max(0.0) / trials as f64).sqrt();
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let exceed = samples.iter().filter(|x| x.abs() > lambda * sigma).count();
            let empirical = exceed as f64 / trials as f64;
            let bound = bernstein_bound(lambda, sigma);
            let b = bound.min(1.0);
            let allowance = bound + 4.0 * (b * (1.0 - b) / trials as f64).sqrt();
            TailRow { lambda, empirical, bound, allowance, holds: empirical <= allowance }
        })
        .collect();
    Ok(ChernoffReport { pairs, sigma, trials, mean, variance, variance_stderr, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSumCell {
    pub n: u64,
    pub p: f64,
    /// `E sup_x sum_y |r(x, y)|`.
    pub sup: MeanEstimate,
    /// `E sum_y |r(0, y)|`.
    pub single_row: MeanEstimate,
}

/// Row-sum statistics of `trials` sampled matrices.
pub fn row_sum_sup(model: &MatrixModel, trials: usize, seed: u64) -> RowSumCell {
    let (sups, singles): (Vec<f64>, Vec<f64>) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let m = model.with_stream(stream_id(&[purpose::MATRIX, seed, t as u64]));
            let sample = sample_matrix(&m);
            let counts = sample.row_counts();
            let sup = counts.iter().map(|&k| sample.row_abs_sum(k)).fold(0.0, f64::max);
            (sup, sample.row_abs_sum(counts[model.n as usize]))
        })
        .unzip();
    RowSumCell {
        n: model.n,
        p: model.p,
        sup: MeanEstimate::from_samples(&sups),
        single_row: MeanEstimate::from_samples(&singles),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSumScan {
    pub cells: Vec<RowSumCell>,
    /// `log2 mean` against `log2 N`; a slope below 1 is sublinear growth.
    pub power_fit: LineFit,
    /// `mean` against `ln N`.
    pub log_fit: LineFit,
    pub increasing: bool,
}

pub fn row_sum_scan(n_list: &[u64], gamma: f64, density: f64, trials: usize, seed: u64) -> Result<RowSumScan> {
    let cells: Vec<RowSumCell> = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let model = MatrixModel::from_gamma(n, gamma, density, seed, 0)?;
            Ok(row_sum_sup(&model, trials, stream_id(&[seed, i as u64])))
        })
        .collect::<Result<_>>()?;
    let xs2: Vec<f64> = cells.iter().map(|c| (c.n as f64).log2()).collect();
    let ys2: Vec<f64> = cells.iter().map(|c| c.sup.mean.log2()).collect();
    let xs: Vec<f64> = cells.iter().map(|c| (c.n as f64).ln()).collect();
    let ys: Vec<f64> = cells.iter().map(|c| c.sup.mean).collect();
    let increasing = cells.windows(2).all(|w| w[1].sup.mean > w[0].sup.mean);
    Ok(RowSumScan { power_fit: least_squares(&xs2, &ys2)?, log_fit: least_squares(&xs, &ys)?, cells, increasing })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub tuples: u64,
    /// `N^{-1}` times the number of window pairs whose slot values all lie in `[-N, N]`.
    pub averaging_full: f64,
    pub averaging_full_count: f64,
    /// Largest number of window pairs sharing one value of `(L_1, L_2)`.
    pub counting_constant: f64,
    pub averaging_monotone: bool,
    pub positive_part_monotone: bool,
    /// `|T(E)| <= 2 A(E_1, E_2, 1, ...) + T(E_1, E_2, 1, ...)`.
    pub triangle_chain: bool,
    /// `A(E) <= A(E_1, E_2, 1, ...) <= C N^{-1} |E_1| |E_2|`.
    pub averaging_bound: bool,
    /// Either `E_M` or its complement in the range of `L_M` keeps half the fiber.
    pub complement_trick: bool,
    /// Tuples with `|E_1| |E_2| < N^{2 - eta}` satisfy
    /// `|E_1|^{-1/2} |E_2|^{-1/2} |T(E)| <= 2 C N^{-eta/2} + |E_1|^{-1/2} |E_2|^{-1/2} |T(E_1, E_2, 1, ...)|`.
    pub small_tuple_bound: bool,
    pub small_tuples: u64,
    pub holds: bool,
}

/// Checks the monotonicity and averaging facts behind splitting off small
/// tuples, over every tuple of sets when `2^{M (2N+1)} <= budget` and over
/// `budget` random tuples otherwise.
pub fn split_bound_check(sample: &SelectorMatrix, family: &FormFamily, eta: f64, budget: u64, seed: u64) -> Result<SplitReport> {
    check_slots(family, 2)?;
    let m = family.forms().len();
    let side = sample.side();
    if side > WEAK_SIDE_CAP || m > 3 {
        return Err(Error::TooLarge(format!("M = {m} on {side} points")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("eta = {eta} outside (0, 1)")));
    }
    let table = PairTable::new(sample, family);
    let n = sample.n as f64;
    let scale = 1.0 / (n * sample.p);
    let full_mask = (1u64 << side) - 1;
    let averaging = |masks: &[u64]| table.fiber_sum(masks, |_| 1.0) / n;
    let positive = |masks: &[u64]| table.fiber_sum(masks, |pos| if table.s[pos] { scale } else { 0.0 });
    let form = |masks: &[u64]| table.fiber_sum(masks, |pos| table.r[pos]);
    let reduced = |masks: &[u64]| {
        let mut r = masks.to_vec();
        r.iter_mut().skip(2).for_each(|x| *x = full_mask);
        r
    };

    let full = vec![full_mask; m];
    let averaging_full_count = table.fiber_sum(&full, |_| 1.0);
    let averaging_full = averaging(&full);

    // every (L_1, L_2) value pair is hit by at most this many window pairs
    let mut fibers = std::collections::HashMap::new();
    for pos in 0..table.r.len() {
        if let (Some(a), Some(b)) = (table.slot[0][pos], table.slot[1][pos]) {
            *fibers.entry((a, b)).or_insert(0u32) += 1;
        }
    }
    let counting_constant = fibers.values().copied().max().unwrap_or(0) as f64;

    // range of L_M over the window, for complements
    let last = &family.forms()[m - 1];
    let ni = sample.n as i64;
    let last_values: Vec<Option<i64>> = (-ni..=ni).flat_map(|x| (-ni..=ni).map(move |y| last.at(x, y))).collect();

    let total_bits = (side * m) as u32;
    let exhaustive = total_bits < 64 && (1u64 << total_bits) <= budget;
    let count = if exhaustive { 1u64 << total_bits } else { budget };
    let mut rng = stream_rng(seed, stream_id(&[purpose::FUNCTIONS]));
    let tol = 1e-9;
    let mut report = SplitReport {
        tuples: count,
        averaging_full,
        averaging_full_count,
        counting_constant,
        averaging_monotone: true,
        positive_part_monotone: true,
        triangle_chain: true,
        averaging_bound: true,
        complement_trick: true,
        small_tuple_bound: true,
        small_tuples: 0,
        holds: true,
    };
    let threshold = n.powf(2.0 - eta);
    for code in 0..count {
        let masks: Vec<u64> = if exhaustive {
            (0..m).map(|j| code >> (j * side) & full_mask).collect()
        } else {
            (0..m).map(|_| rng.next_u64() & full_mask).collect()
        };
        let a = averaging(&masks);
        let pos_part = positive(&masks);
        let t = form(&masks);
        let red = reduced(&masks);
        let (a_red, t_red) = (averaging(&red), form(&red));
        let (e1, e2) = (masks[0].count_ones() as f64, masks[1].count_ones() as f64);

        // enlarging one set by one element
        let j = rng.random_range(0..m);
        let free = !masks[j] & full_mask;
        if free != 0 {
            let mut bigger = masks.clone();
            bigger[j] |= 1 << free.trailing_zeros();
            report.averaging_monotone &= averaging(&bigger) >= a - tol;
            report.positive_part_monotone &= positive(&bigger) >= pos_part - tol;
        }
        let slack = tol * (1.0 + a_red + t_red.abs());
        report.triangle_chain &= t.abs() <= 2.0 * a_red + t_red + slack;
        report.averaging_bound &= a <= a_red + tol && a_red <= counting_constant * e1 * e2 / n + tol;

        // split the E_M-free fiber by E_M and its complement in the range of L_M
        let mut without = masks.clone();
        without.truncate(m - 1);
        let base: Vec<usize> = (0..table.r.len())
            .filter(|&pos| {
                table.slot[..m - 1]
                    .iter()
                    .zip(&without)
                    .all(|(sl, &mk)| sl[pos].is_some_and(|t| mk >> t & 1 == 1))
            })
            .collect();
        let in_em = base
            .iter()
            .filter(|&&pos| table.slot[m - 1][pos].is_some_and(|t| masks[m - 1] >> t & 1 == 1))
            .count();
        let free_sum = base.iter().filter(|&&pos| last_values[pos].is_some()).count();
        report.complement_trick &= 2 * in_em.max(free_sum - in_em) >= free_sum;

        if e1 > 0.0 && e2 > 0.0 && e1 * e2 < threshold {
            report.small_tuples += 1;
            let norm = (e1 * e2).sqrt();
            let lhs = t.abs() / norm;
            let rhs = 2.0 * counting_constant * n.powf(-eta / 2.0) + t_red.abs() / norm;
            report.small_tuple_bound &= lhs <= rhs + tol;
        }
    }
    report.holds = report.averaging_monotone
        && report.positive_part_monotone
        && report.triangle_chain
        && report.averaging_bound
        && report.complement_trick
        && report.small_tuple_bound;
    Ok(report)
}

/// Seeded spectral norms of `trials` matrices drawn from `model`.
pub fn spectral_norm_samples(model: &MatrixModel, trials: usize, seed: u64) -> Vec<f64> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let m = model.with_stream(stream_id(&[purpose::MATRIX, seed, t as u64]));
            let sample = sample_matrix(&m);
            let mut rng = stream_rng(seed, stream_id(&[purpose::RESTART, t as u64]));
            sample.spectral_norm(SPECTRAL_STEPS, SPECTRAL_TOL, &mut rng).sigma
        })
        .collect()
}

pub const SPECTRAL_STEPS: usize = 300;
pub const SPECTRAL_TOL: f64 = 1e-7;

/// The identity form `(x, y) -> (x, y)` used when a caller wants the bare matrix.
pub fn coordinate_slots() -> FormFamily {
    FormFamily::new(vec![LinearForm::x(), LinearForm::y()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_spectral_norm;

    fn model(n: u64, p: f64, seed: u64) -> MatrixModel {
        MatrixModel::new(n, p, seed, 0).unwrap()
    }

    #[test]
    fn full_density_vanishes() {
        let s = sample_matrix(&model(3, 1.0, 0));
        assert_eq!(s.selected_count(), 49);
        assert!(s.to_dense().iter().all(|&v| v == 0.0));
        let mut rng = stream_rng(0, 0);
        assert_eq!(s.spectral_norm(50, 1e-9, &mut rng).sigma, 0.0);
    }

    #[test]
    fn samplers_are_deterministic_and_unbiased() {
        for p in [0.5, 0.1, 0.4] {
            let a = sample_matrix(&model(20, p, 3));
            let b = sample_matrix(&model(20, p, 3));
            assert_eq!(a, b);
            let counts: Vec<f64> = (0..300)
                .map(|t| sample_matrix(&model(20, p, 3).with_stream(t)).row_counts()[7] as f64)
                .collect();
            let est = MeanEstimate::from_samples(&counts);
            assert!(est.z_score(41.0 * p).abs() < 4.0, "p = {p}: {est:?}");
        }
    }

    #[test]
    fn transpose_and_matvec_agree_with_dense() {
        for p in [0.5, 0.2, 0.7] {
            let s = sample_matrix(&model(37, p, 1));
            let dense = s.to_dense();
            let x: Vec<f64> = (0..75).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let mut out = vec![0.0; 75];
            s.apply(&x, &mut out);
            let want = &dense * nalgebra::DVector::from_vec(x.clone());
            assert!(out.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
            s.apply_transpose(&x, &mut out);
            let want = dense.transpose() * nalgebra::DVector::from_vec(x);
            assert!(out.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn lanczos_matches_dense_svd() {
        let s = sample_matrix(&model(40, 0.2, 5));
        let mut rng = stream_rng(1, 1);
        let l = s.spectral_norm(SPECTRAL_STEPS, 1e-10, &mut rng);
        let d = dense_spectral_norm(&s.to_dense());
        assert!((l.sigma - d).abs() < 1e-6 * d, "{} vs {d}", l.sigma);
    }

    #[test]
    fn form_of_deltas_picks_an_entry() {
        let s = sample_matrix(&model(4, 0.5, 2));
        let fs = vec![FunctionVec::delta(4, 2, 1.0), FunctionVec::delta(4, -3, 1.0)];
        let v = matrix_form(&s, &coordinate_slots(), &fs).unwrap();
        assert_eq!(v, s.r(2, -3));
    }

    #[test]
    fn constant_form_is_total_mass() {
        let s = sample_matrix(&model(6, 0.25, 4));
        let family: FormFamily = "1,0; 0,1; 1,1".parse().unwrap();
        let ones = vec![FunctionVec::constant(6, 1.0), FunctionVec::constant(6, 1.0), FunctionVec::constant(12, 1.0)];
        let total: f64 = s.to_dense().iter().sum();
        assert!((matrix_form(&s, &family, &ones).unwrap() - total).abs() < 1e-12);
        assert!(matches!(matrix_form(&s, &family, &ones[..2]), Err(Error::Arity { .. })));
    }

    #[test]
    fn second_set_optimum() {
        let c = [3.0, -1.0, 2.0, -5.0];
        let (v, mask) = best_second_set(&c);
        assert!((v - 5.0).abs() < 1e-12);
        assert_eq!(mask, 1 << 3);
        let (v, mask) = best_second_set(&[1.0, 1.0, 1.0]);
        assert!((v - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(mask, 0b111);
    }

    #[test]
    fn weak_norm_matches_exhaustive() {
        for (fam, n) in [("1,0; 0,1", 3u64), ("1,0; 0,1; 1,1", 2), ("1,1; 1,-1; 1,0", 2)] {
            for seed in 0..4 {
                let s = sample_matrix(&model(n, 0.5, seed));
                let family: FormFamily = fam.parse().unwrap();
                let fast = weak_norm_bruteforce(&s, &family).unwrap();
                let slow = weak_norm_exhaustive(&s, &family).unwrap();
                assert!((fast.value - slow).abs() < 1e-12 * slow.max(1.0), "{fam}: {} vs {slow}", fast.value);
                let t = matrix_form(&s, &family, &fast.witness.indicators()).unwrap();
                let norm = ((fast.witness.size(0) * fast.witness.size(1)) as f64).sqrt();
                assert!((t.abs() / norm - fast.value).abs() < 1e-12 * fast.value.max(1.0));
            }
        }
    }

    #[test]
    fn weak_norm_edge_cases() {
        let s = sample_matrix(&model(2, 1.0, 0));
        assert_eq!(weak_norm_bruteforce(&s, &coordinate_slots()).unwrap().value, 0.0);
        let big = sample_matrix(&model(6, 0.5, 0));
        assert!(matches!(weak_norm_bruteforce(&big, &coordinate_slots()), Err(Error::TooLarge(_))));
    }

    #[test]
    fn chernoff_zero_lambda_is_vacuous() {
        let report = chernoff_tail_check(&model(8, 0.3, 0), &PairSet::full(8), &[0.0], 200, 1).unwrap();
        assert_eq!(report.rows[0].bound, 2.0);
        assert!(report.rows[0].empirical <= 1.0 && report.rows[0].holds);
        assert_eq!(report.pairs, 289);
    }

    #[test]
    fn row_sums_match_dense() {
        let s = sample_matrix(&model(9, 0.3, 8));
        let dense = s.to_dense();
        for (i, &k) in s.row_counts().iter().enumerate() {
            let direct: f64 = dense.row(i).iter().map(|v| v.abs()).sum();
            assert!((direct - s.row_abs_sum(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn split_facts_on_small_instances() {
        for seed in 0..3 {
            let s = sample_matrix(&model(2, 0.5, seed));
            let r = split_bound_check(&s, &"1,0; 0,1; 1,1".parse().unwrap(), 0.5, 1 << 15, seed).unwrap();
            assert!(r.holds, "{r:?}");
            assert_eq!(r.tuples, 1 << 15);
            assert!(r.counting_constant <= 1.0);
        }
    }
}
