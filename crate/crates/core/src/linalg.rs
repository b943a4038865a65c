//! Matrix-free singular value estimation.
//!
//! Power iteration serves the norm estimators, where a warm start from the
//! previous ascent step is available. Lanczos on `A^T A` with full
//! reorthogonalisation serves the large random matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]);
}

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriple<T> {
    pub sigma: f64,
    pub left: Vec<T>,
    pub right: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top singular triple by power iteration on `A^T A`, warm started at `start`.
/// The tracked `||A v||` is nondecreasing across iterations.
pub fn power_iteration<A: LinearOperator + ?Sized>(op: &A, start: &[f64], opts: PowerOptions) -> SingularTriple<f64> {
    let (m, n) = (op.nrows(), op.ncols());
    let mut v = start.to_vec();
    if normalize(&mut v) == 0.0 {
        v = vec![1.0 / (n as f64).sqrt(); n];
    }
    let mut w = vec![0.0; m];
    let mut z = vec![0.0; n];
    op.apply(&v, &mut w);
    let mut sigma = norm(&w);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter && sigma > 0.0 {
        iterations += 1;
        op.apply_transpose(&w, &mut z);
        if normalize(&mut z) == 0.0 {
            break;
        }
        op.apply(&z, &mut w);
        let next = norm(&w);
        std::mem::swap(&mut v, &mut z);
        let change = (next - sigma).abs();
        sigma = next;
        if change <= opts.tol * sigma {
            converged = true;
            break;
        }
    }
    if sigma == 0.0 {
        return SingularTriple { sigma, left: vec![0.0; m], right: v, iterations, converged: true };
    }
    w.iter_mut().for_each(|x| *x /= sigma);
    SingularTriple { sigma, left: w, right: v, iterations, converged }
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply_adjoint(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (i, xi) in x.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xi;
            }
        }
    }
}

pub fn cnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn cnormalize(v: &mut [Complex64]) -> f64 {
    let n = cnorm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Complex counterpart of [`power_iteration`].
pub fn power_iteration_complex(a: &ComplexMatrix, start: &[Complex64], opts: PowerOptions) -> SingularTriple<Complex64> {
    let mut v = start.to_vec();
    if cnormalize(&mut v) == 0.0 {
        v = vec![Complex64::new(1.0 / (a.cols as f64).sqrt(), 0.0); a.cols];
    }
    let mut w = vec![Complex64::new(0.0, 0.0); a.rows];
    let mut z = vec![Complex64::new(0.0, 0.0); a.cols];
    a.apply(&v, &mut w);
    let mut sigma = cnorm(&w);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter && sigma > 0.0 {
        iterations += 1;
        a.apply_adjoint(&w, &mut z);
        if cnormalize(&mut z) == 0.0 {
            break;
        }
        a.apply(&z, &mut w);
        let next = cnorm(&w);
        std::mem::swap(&mut v, &mut z);
        let change = (next - sigma).abs();
        sigma = next;
        if change <= opts.tol * sigma {
            converged = true;
            break;
        }
    }
    if sigma > 0.0 {
        w.iter_mut().for_each(|x| *x /= sigma);
    }
    SingularTriple { sigma, left: w, right: v, iterations, converged: converged || sigma == 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosResult {
    pub sigma: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Largest eigenvalue of the symmetric tridiagonal matrix (`alpha` diagonal,
/// `beta` off-diagonal) by Sturm-sequence bisection.
fn tridiagonal_max_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let mut hi = f64::MIN;
    let mut lo = f64::MAX;
    for i in 0..k {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < k { beta[i].abs() } else { 0.0 };
        hi = hi.max(alpha[i] + r);
        lo = lo.min(alpha[i] - r);
    }
    // number of eigenvalues strictly greater than x
    let count_above = |x: f64| {
        let mut above = 0;
        let mut d = 1.0;
        for i in 0..k {
            let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
            d = alpha[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + 1.0);
            }
            if d > 0.0 {
                above += 1;
            }
        }
        above
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_above(mid) >= 1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest singular value by Lanczos on `A^T A` with full reorthogonalisation.
pub fn lanczos_top_singular<A: LinearOperator + ?Sized, R: Rng + ?Sized>(
    op: &A,
    max_steps: usize,
    tol: f64,
    rng: &mut R,
) -> LanczosResult {
    let n = op.ncols();
    let steps_cap = max_steps.min(n).max(1);
    let mut q: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps_cap);
    let mut alpha = Vec::with_capacity(steps_cap);
    let mut beta: Vec<f64> = Vec::with_capacity(steps_cap);
    let mut tmp = vec![0.0; op.nrows()];
    let mut w = vec![0.0; n];
    let mut theta = 0.0;
    let mut stable = 0;
    for step in 0..steps_cap {
        op.apply(&q, &mut tmp);
        op.apply_transpose(&tmp, &mut w);
        let a = dot(&w, &q);
        alpha.push(a);
        basis.push(q.clone());
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let next_theta = tridiagonal_max_eigenvalue(&alpha, &beta).max(0.0);
        let change = (next_theta - theta).abs();
        theta = next_theta;
        let b = norm(&w);
        if b <= 1e-13 * theta.max(f64::MIN_POSITIVE) {
            return LanczosResult { sigma: theta.sqrt(), steps: step + 1, converged: true };
        }
        if change <= tol * theta {
            stable += 1;
            if stable >= 2 {
                return LanczosResult { sigma: theta.sqrt(), steps: step + 1, converged: true };
            }
        } else {
            stable = 0;
        }
        beta.push(b);
        q.iter_mut().zip(&w).for_each(|(qi, wi)| *qi = wi / b);
    }
    LanczosResult { sigma: theta.sqrt(), steps: steps_cap, converged: false }
}

/// Exact largest singular value through a dense SVD.
pub fn dense_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream_rng(seed, 0);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn power_iteration_matches_svd() {
        let a = random_matrix(12, 9, 1);
        let exact = dense_spectral_norm(&a.to_nalgebra());
        let t = power_iteration(&a, &[1.0; 9], PowerOptions { tol: 1e-14, max_iter: 5000 });
        assert!((t.sigma - exact).abs() < 1e-8 * exact);
        let mut av = vec![0.0; 12];
        a.apply(&t.right, &mut av);
        assert!((norm(&av) - t.sigma).abs() < 1e-12);
    }

    #[test]
    fn lanczos_matches_svd() {
        let a = random_matrix(40, 30, 2);
        let exact = dense_spectral_norm(&a.to_nalgebra());
        let res = lanczos_top_singular(&a, 30, 1e-12, &mut stream_rng(3, 0));
        assert!((res.sigma - exact).abs() < 1e-9 * exact, "{} vs {exact}", res.sigma);
    }

    #[test]
    fn tridiagonal_bisection() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        assert!((tridiagonal_max_eigenvalue(&[2.0, 2.0], &[1.0]) - 3.0).abs() < 1e-12);
        assert!((tridiagonal_max_eigenvalue(&[5.0], &[]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_operator() {
        let a = DenseMatrix::zeros(4, 3);
        assert_eq!(power_iteration(&a, &[1.0, 0.0, 0.0], PowerOptions::default()).sigma, 0.0);
        assert_eq!(lanczos_top_singular(&a, 10, 1e-10, &mut stream_rng(0, 0)).sigma, 0.0);
    }

    #[test]
    fn complex_power_iteration_on_diagonal() {
        let i = Complex64::new(0.0, 1.0);
        let a = ComplexMatrix {
            rows: 2,
            cols: 2,
            data: vec![i * 3.0, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        };
        let t = power_iteration_complex(&a, &[Complex64::new(1.0, 0.0); 2], PowerOptions::default());
        assert!((t.sigma - 3.0).abs() < 1e-9);
    }
}
