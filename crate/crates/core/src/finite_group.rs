//! Exact Fourier analysis on `G = Z_p^d x Z_p`.
//!
//! Elements are stored row-major as `(x_1, ..., x_d, x_{d+1})` with the last
//! coordinate varying fastest. The Fourier transform uses the unnormalised
//! convention `f^(xi) = sum_x f(x) e^{-2 pi i xi.x / p}`; all phases are looked
//! up from a table indexed by the exponent reduced mod `p`, so no trig call ever
//! sees an argument larger than `2 pi`.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::rng::{purpose, stream_id, stream_rng};
use crate::stats::CompensatedSum;
use crate::{Error, Result};

/// Transforms on groups of at most this order use direct summation.
pub const NAIVE_DFT_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupSpec {
    p: u64,
    d: u32,
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut k = 3;
    while k * k <= n {
        if n.is_multiple_of(k) {
            return false;
        }
        k += 2;
    }
    true
}

impl GroupSpec {
    pub fn new(p: u64, d: u32) -> Result<Self> {
        if p < 3 || !is_prime(p) {
            return Err(Error::NotPrime(p));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension d must be at least 1".into()));
        }
        let order = p
            .checked_pow(d + 1)
            .filter(|&o| usize::try_from(o).is_ok())
            .ok_or(Error::GroupTooLarge { p, d })?;
        debug_assert!(order > 0);
        Ok(Self { p, d })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    /// Number of coordinates, `d + 1`.
    pub fn rank(&self) -> usize {
        self.d as usize + 1
    }

    pub fn order(&self) -> usize {
        (self.p as usize).pow(self.d + 1)
    }

    pub fn coords(&self, mut index: usize) -> Vec<u64> {
        let p = self.p as usize;
        let mut c = vec![0u64; self.rank()];
        for slot in c.iter_mut().rev() {
            *slot = (index % p) as u64;
            index /= p;
        }
        c
    }

    pub fn index(&self, coords: &[u64]) -> usize {
        debug_assert_eq!(coords.len(), self.rank());
        coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.p as usize + (c % self.p) as usize)
    }

    /// Flat table of all coordinates, `rank()` entries per element.
    fn coordinate_table(&self) -> Vec<u32> {
        let mut table = Vec::with_capacity(self.order() * self.rank());
        for i in 0..self.order() {
            table.extend(self.coords(i).into_iter().map(|c| c as u32));
        }
        table
    }

    /// `e^{-2 pi i k / p}` for `k = 0..p`.
    fn twiddles(&self) -> Vec<Complex64> {
        let p = self.p as f64;
        (0..self.p)
            .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / p))
            .collect()
    }

    /// `e^{+2 pi i k / p}` for `k = 0..p`.
    fn phases(&self) -> Vec<Complex64> {
        self.twiddles().into_iter().map(|w| w.conj()).collect()
    }
}

/// Index arithmetic on a fixed group without re-deriving coordinates.
struct Arithmetic {
    p: usize,
    rank: usize,
    coords: Vec<u32>,
    strides: Vec<usize>,
}

impl Arithmetic {
    fn new(spec: &GroupSpec) -> Self {
        let rank = spec.rank();
        let p = spec.p as usize;
        let mut strides = vec![1usize; rank];
        for k in (0..rank - 1).rev() {
            strides[k] = strides[k + 1] * p;
        }
        Self { p, rank, coords: spec.coordinate_table(), strides }
    }

    fn at(&self, i: usize) -> &[u32] {
        &self.coords[i * self.rank..(i + 1) * self.rank]
    }

    /// Index of `a * x + b * y` with coefficients taken mod p.
    fn combine(&self, x: usize, a: usize, y: usize, b: usize) -> usize {
        let (cx, cy) = (self.at(x), self.at(y));
        (0..self.rank)
            .map(|k| ((a * cx[k] as usize + b * cy[k] as usize) % self.p) * self.strides[k])
            .sum()
    }

    fn dot(&self, x: usize, y: usize) -> usize {
        let (cx, cy) = (self.at(x), self.at(y));
        cx.iter().zip(cy).map(|(&a, &b)| a as usize * b as usize).sum::<usize>() % self.p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFunction {
    spec: GroupSpec,
    values: Vec<Complex64>,
}

impl GroupFunction {
    pub fn new(spec: GroupSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.order() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                spec.order(),
                values.len()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GroupSpec) -> Self {
        Self { spec, values: vec![Complex64::new(0.0, 0.0); spec.order()] }
    }

    pub fn from_fn(spec: GroupSpec, mut f: impl FnMut(&[u64]) -> Complex64) -> Self {
        let values = (0..spec.order()).map(|i| f(&spec.coords(i))).collect();
        Self { spec, values }
    }

    /// Point mass at the element with the given coordinates.
    pub fn delta(spec: GroupSpec, at: &[u64]) -> Self {
        let mut out = Self::zeros(spec);
        out.values[spec.index(at)] = Complex64::new(1.0, 0.0);
        out
    }

    pub fn spec(&self) -> GroupSpec {
        self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn at(&self, coords: &[u64]) -> Complex64 {
        self.values[self.spec.index(coords)]
    }

    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &GroupFunction) -> Result<GroupFunction> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { spec: self.spec, values })
    }
}

fn squared_norm_mod(c: &[u64], p: u64) -> u64 {
    c.iter().map(|&x| x * x % p).sum::<u64>() % p
}

/// Normalised surface measure of the paraboloid `x_{d+1} = |x'|^2`.
pub fn build_mu_p(spec: GroupSpec) -> GroupFunction {
    let mass = (spec.p as f64).powi(-(spec.d as i32));
    let d = spec.d as usize;
    GroupFunction::from_fn(spec, |c| {
        if c[d] == squared_norm_mod(&c[..d], spec.p) {
            Complex64::new(mass, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Uniform probability measure.
pub fn build_m_p(spec: GroupSpec) -> GroupFunction {
    let mass = 1.0 / spec.order() as f64;
    GroupFunction { spec, values: vec![Complex64::new(mass, 0.0); spec.order()] }
}

/// Mean-zero part `mu_p - m_p`.
pub fn build_nu_p(spec: GroupSpec) -> GroupFunction {
    build_mu_p(spec)
        .sub(&build_m_p(spec))
        .expect("same spec by construction")
}

/// Direct `O(|G|^2)` transform.
pub fn dft_naive(f: &GroupFunction) -> GroupFunction {
    let spec = f.spec;
    let arith = Arithmetic::new(&spec);
    let tw = spec.twiddles();
    let n = spec.order();
    let values = (0..n)
        .map(|xi| {
            let mut re = CompensatedSum::new();
            let mut im = CompensatedSum::new();
            for (x, v) in f.values.iter().enumerate() {
                let t = v * tw[arith.dot(xi, x)];
                re.add(t.re);
                im.add(t.im);
            }
            Complex64::new(re.value(), im.value())
        })
        .collect();
    GroupFunction { spec, values }
}

/// Transform by `d + 1` passes of length-`p` transforms, one per coordinate.
pub fn dft_factored(f: &GroupFunction) -> GroupFunction {
    let spec = f.spec;
    let p = spec.p as usize;
    let tw = spec.twiddles();
    let mut data = f.values.clone();
    let mut line = vec![Complex64::new(0.0, 0.0); p];
    let n = spec.order();
    let mut stride = 1usize;
    for _ in 0..spec.rank() {
        let block = stride * p;
        for start in (0..n).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (k, slot) in line.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..p {
                        acc += data[base + j * stride] * tw[(k * j) % p];
                    }
                    *slot = acc;
                }
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
        stride = block;
    }
    GroupFunction { spec, values: data }
}

pub fn dft(f: &GroupFunction) -> GroupFunction {
    if f.spec.order() <= NAIVE_DFT_LIMIT {
        dft_naive(f)
    } else {
        dft_factored(f)
    }
}

/// `max_{xi != 0} |f^(xi)|`.
pub fn max_nonzero_fourier(f: &GroupFunction) -> f64 {
    dft(f).values[1..].iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Unimodular phase functions `(f, g, h)` for which `f(x) g(y) h(x+y)` is
/// constant on the support of `mu_p(x - y)`.
pub fn obstruction_witness(spec: GroupSpec) -> (GroupFunction, GroupFunction, GroupFunction) {
    let p = spec.p;
    let d = spec.d as usize;
    let phase = spec.phases();
    let f = GroupFunction::from_fn(spec, |c| {
        let q = squared_norm_mod(&c[..d], p);
        phase[((c[d] + 2 * (p - q)) % p) as usize]
    });
    let g = GroupFunction::from_fn(spec, |c| {
        let q = squared_norm_mod(&c[..d], p);
        phase[((2 * p - c[d] + 2 * (p - q)) % p) as usize]
    });
    let h = GroupFunction::from_fn(spec, |c| phase[squared_norm_mod(&c[..d], p) as usize]);
    (f, g, h)
}

/// `Phi(x, y) mod p`, the phase of `f(x) g(y) h(x+y)` for the witness triple.
pub fn obstruction_phase(spec: GroupSpec, x: &[u64], y: &[u64]) -> u64 {
    let p = spec.p;
    let d = spec.d as usize;
    let sum: Vec<u64> = x[..d].iter().zip(&y[..d]).map(|(a, b)| (a + b) % p).collect();
    let s = squared_norm_mod(&sum, p);
    let qx = squared_norm_mod(&x[..d], p);
    let qy = squared_norm_mod(&y[..d], p);
    (s + x[d] + (p - y[d]) + 2 * (p - qx) + 2 * (p - qy)) % p
}

fn check_same(fs: &[&GroupFunction]) -> Result<GroupSpec> {
    let spec = fs[0].spec;
    if fs.iter().any(|f| f.spec != spec) {
        return Err(Error::SpecMismatch);
    }
    Ok(spec)
}

fn support(k: &GroupFunction) -> Vec<(usize, Complex64)> {
    k.values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

/// `sum_{x,y} f(x) g(y) h(x+y) k(x-y)`.
pub fn trilinear_form(
    f: &GroupFunction,
    g: &GroupFunction,
    h: &GroupFunction,
    kernel: &GroupFunction,
) -> Result<Complex64> {
    let spec = check_same(&[f, g, h, kernel])?;
    let arith = Arithmetic::new(&spec);
    let p = arith.p;
    let ker = support(kernel);
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for x in 0..spec.order() {
        let fx = f.values[x];
        if fx.re == 0.0 && fx.im == 0.0 {
            continue;
        }
        for &(t, kt) in &ker {
            // y = x - t, x + y = 2x - t
            let y = arith.combine(x, 1, t, p - 1);
            let s = arith.combine(x, 2, t, p - 1);
            let v = fx * g.values[y] * h.values[s] * kt;
            re.add(v.re);
            im.add(v.im);
        }
    }
    Ok(Complex64::new(re.value(), im.value()))
}

/// `sum_{x,y} f(x) g(y) k(x-y)`.
pub fn bilinear_form(f: &GroupFunction, g: &GroupFunction, kernel: &GroupFunction) -> Result<Complex64> {
    let spec = check_same(&[f, g, kernel])?;
    let arith = Arithmetic::new(&spec);
    let p = arith.p;
    let ker = support(kernel);
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for x in 0..spec.order() {
        for &(t, kt) in &ker {
            let y = arith.combine(x, 1, t, p - 1);
            let v = f.values[x] * g.values[y] * kt;
            re.add(v.re);
            im.add(v.im);
        }
    }
    Ok(Complex64::new(re.value(), im.value()))
}

#[derive(Debug, Clone, Serialize)]
pub struct BilinearCheck {
    /// `p^{-d/2}`.
    pub bound: f64,
    pub trials: usize,
    pub max_random_ratio: f64,
    pub delta_ratio: f64,
    pub character_ratio: f64,
    pub holds: bool,
}

fn ratio(f: &GroupFunction, g: &GroupFunction, kernel: &GroupFunction) -> Result<f64> {
    let denom = f.norm2() * g.norm2();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(bilinear_form(f, g, kernel)?.norm() / denom)
}

/// Checks `|sum f(x) g(y) nu_p(x-y)| <= p^{-d/2} |f|_2 |g|_2` on random complex
/// Gaussian pairs, point masses at the identity, and the extremal characters.
pub fn bilinear_bound_check(spec: GroupSpec, trials: usize, seed: u64) -> Result<BilinearCheck> {
    let nu = build_nu_p(spec);
    let bound = (spec.p as f64).powf(-(spec.d as f64) / 2.0);
    let mut max_random_ratio = 0.0f64;
    for trial in 0..trials {
        let mut rng = stream_rng(seed, stream_id(&[purpose::FUNCTIONS, trial as u64]));
        let mut gaussian = || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        };
        let f = GroupFunction { spec, values: (0..spec.order()).map(|_| gaussian()).collect() };
        let g = GroupFunction { spec, values: (0..spec.order()).map(|_| gaussian()).collect() };
        max_random_ratio = max_random_ratio.max(ratio(&f, &g, &nu)?);
    }
    let zero = vec![0u64; spec.rank()];
    let delta = GroupFunction::delta(spec, &zero);
    let delta_ratio = ratio(&delta, &delta, &nu)?;

    // f(x) = e^{2 pi i xi.x/p}, g = conj(f) gives |G| nu^(-xi); pick the maximising xi.
    let nu_hat = dft(&nu);
    let (xi_star, _) = nu_hat
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.norm()))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let neg_xi: Vec<u64> = spec.coords(xi_star).iter().map(|&c| (spec.p - c) % spec.p).collect();
    let arith = Arithmetic::new(&spec);
    let phase = spec.phases();
    let neg_idx = spec.index(&neg_xi);
    let chi = GroupFunction {
        spec,
        values: (0..spec.order()).map(|x| phase[arith.dot(neg_idx, x)]).collect(),
    };
    let chi_bar = GroupFunction { spec, values: chi.values.iter().map(|v| v.conj()).collect() };
    let character_ratio = ratio(&chi, &chi_bar, &nu)?;

    let tol = 1e-9;
    let holds = max_random_ratio <= bound + tol && delta_ratio <= bound + tol && character_ratio <= bound + tol;
    Ok(BilinearCheck { bound, trials, max_random_ratio, delta_ratio, character_ratio, holds })
}

#[derive(Debug, Clone, Serialize)]
pub struct ObstructionReport {
    pub p: u64,
    pub d: u32,
    pub gauss_max: f64,
    pub expected: f64,
    pub trilinear_re: f64,
    pub trilinear_im: f64,
    pub trilinear_uniform_abs: f64,
    pub norm_product: f64,
    pub ratio: f64,
}

pub fn obstruction_report(spec: GroupSpec) -> Result<ObstructionReport> {
    let mu = build_mu_p(spec);
    let (f, g, h) = obstruction_witness(spec);
    let value = trilinear_form(&f, &g, &h, &build_nu_p(spec))?;
    let uniform = trilinear_form(&f, &g, &h, &build_m_p(spec))?;
    let norm_product = f.norm2() * g.norm2() * h.norm_inf();
    Ok(ObstructionReport {
        p: spec.p,
        d: spec.d,
        gauss_max: max_nonzero_fourier(&mu),
        expected: (spec.p as f64).powf(-(spec.d as f64) / 2.0),
        trilinear_re: value.re,
        trilinear_im: value.im,
        trilinear_uniform_abs: uniform.norm(),
        norm_product,
        ratio: value.norm() / norm_product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: u64, d: u32) -> GroupSpec {
        GroupSpec::new(p, d).unwrap()
    }

    #[test]
    fn rejects_composites_and_small_primes() {
        assert!(matches!(GroupSpec::new(9, 1), Err(Error::NotPrime(9))));
        assert!(matches!(GroupSpec::new(2, 1), Err(Error::NotPrime(2))));
        assert!(GroupSpec::new(3, 0).is_err());
        assert!(matches!(GroupSpec::new(1_000_003, 5), Err(Error::GroupTooLarge { .. })));
    }

    #[test]
    fn index_roundtrip() {
        let s = spec(5, 2);
        for i in 0..s.order() {
            assert_eq!(s.index(&s.coords(i)), i);
        }
    }

    #[test]
    fn mu_p_small_case() {
        let s = spec(3, 1);
        let mu = build_mu_p(s);
        let nonzero: Vec<_> = (0..s.order())
            .filter(|&i| mu.values[i].norm() > 0.0)
            .map(|i| s.coords(i))
            .collect();
        assert_eq!(nonzero, vec![vec![0, 0], vec![1, 1], vec![2, 1]]);
        for c in &nonzero {
            assert_eq!(mu.at(c), Complex64::new(1.0 / 3.0, 0.0));
        }
    }

    #[test]
    fn masses() {
        assert!((build_mu_p(spec(7, 2)).sum().re - 1.0).abs() < 1e-12);
        assert!(build_nu_p(spec(5, 1)).sum().norm() < 1e-15);
    }

    #[test]
    fn uniform_measure_transform() {
        let s = spec(5, 1);
        let hat = dft(&build_m_p(s));
        assert!((hat.values[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(hat.values[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn delta_transform_is_constant() {
        let s = spec(5, 2);
        let hat = dft(&GroupFunction::delta(s, &[0, 0, 0]));
        assert!(hat.values.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn factored_transform_matches_direct_sum() {
        let s = spec(5, 2);
        let f = GroupFunction::from_fn(s, |c| {
            Complex64::new(c[0] as f64 - 0.5 * c[2] as f64, (c[1] * c[2]) as f64 / 3.0)
        });
        let a = dft_naive(&f);
        let b = dft_factored(&f);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn double_transform_reflects() {
        let s = spec(3, 2);
        let f = GroupFunction::from_fn(s, |c| Complex64::new(c[0] as f64 + 2.0 * c[1] as f64, c[2] as f64));
        let twice = dft(&dft(&f));
        let n = s.order() as f64;
        for i in 0..s.order() {
            let neg: Vec<u64> = s.coords(i).iter().map(|&c| (3 - c) % 3).collect();
            assert!((twice.values[i] - f.at(&neg) * n).norm() < 1e-9);
        }
    }

    #[test]
    fn gauss_sum_maximum_values() {
        let s = spec(5, 1);
        assert!((max_nonzero_fourier(&build_mu_p(s)) - 5f64.powf(-0.5)).abs() < 1e-12);
        let s = spec(7, 2);
        let nu = build_nu_p(s);
        assert!((max_nonzero_fourier(&nu) - 1.0 / 7.0).abs() < 1e-12);
        let all_max = dft(&nu).values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((all_max - 1.0 / 7.0).abs() < 1e-12);
        assert!(max_nonzero_fourier(&build_m_p(s)) < 1e-12);
    }

    #[test]
    fn witness_is_unimodular_with_expected_norms() {
        let s = spec(5, 2);
        let (f, g, h) = obstruction_witness(s);
        for v in f.values.iter().chain(&g.values).chain(&h.values) {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        let expected = 5f64.powf(1.5);
        assert!((f.norm2() - expected).abs() < 1e-9);
        assert!((g.norm2() - expected).abs() < 1e-9);
        assert!((h.norm_inf() - 1.0).abs() < 1e-12);
        let zero = [0, 0, 0];
        assert!((f.at(&zero) * g.at(&zero) * h.at(&zero) - 1.0).norm() < 1e-15);
    }

    #[test]
    fn phase_vanishes_on_paraboloid_shifts() {
        let s = spec(3, 1);
        let mu = build_mu_p(s);
        let (f, g, h) = obstruction_witness(s);
        let phase = s.phases();
        for xi in 0..s.order() {
            for yi in 0..s.order() {
                let (x, y) = (s.coords(xi), s.coords(yi));
                let diff: Vec<u64> = x.iter().zip(&y).map(|(a, b)| (a + 3 - b) % 3).collect();
                let sum: Vec<u64> = x.iter().zip(&y).map(|(a, b)| (a + b) % 3).collect();
                let phi = obstruction_phase(s, &x, &y);
                let direct = f.at(&x) * g.at(&y) * h.at(&sum);
                assert!((direct - phase[phi as usize]).norm() < 1e-12);
                if mu.at(&diff).norm() > 0.0 {
                    assert_eq!(phi, 0, "x={x:?} y={y:?}");
                }
            }
        }
    }

    #[test]
    fn trilinear_values() {
        let s = spec(5, 1);
        let (f, g, h) = obstruction_witness(s);
        let mu_val = trilinear_form(&f, &g, &h, &build_mu_p(s)).unwrap();
        assert!((mu_val - Complex64::new(25.0, 0.0)).norm() < 1e-9);
        let m_val = trilinear_form(&f, &g, &h, &build_m_p(s)).unwrap();
        assert!(m_val.norm() < 1e-9);
        let delta = GroupFunction::delta(s, &[0, 0]);
        let one = trilinear_form(&delta, &delta, &delta, &delta).unwrap();
        assert_eq!(one, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn trilinear_rejects_mixed_groups() {
        let a = build_mu_p(spec(5, 1));
        let b = build_mu_p(spec(7, 1));
        assert!(matches!(trilinear_form(&a, &a, &a, &b), Err(Error::SpecMismatch)));
    }

    #[test]
    fn bilinear_check_small_group() {
        let s = spec(7, 1);
        let report = bilinear_bound_check(s, 100, 11).unwrap();
        assert!(report.holds);
        assert!(report.max_random_ratio <= 7f64.powf(-0.5) + 1e-9);
        let nu0 = build_nu_p(s).at(&[0, 0]).norm();
        assert!((report.delta_ratio - nu0).abs() < 1e-15);
        assert!((report.character_ratio - report.bound).abs() < 1e-9);
    }
}
