//! Maximal operator `T*(f, g)(x) = sup_xi |T(e_xi f, g)(x)|` with `e_xi(y) = e^{i xi y}`.
//!
//! The supremum runs over the grid `xi_k = 2 pi k / G`. Each output point picks
//! its own frequency, after which `T*` is linear in `f` with the row phases fixed,
//! and the ascent proceeds as for `T` with unimodular complex `g_j`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use super::{Layout, MultilinearInstance};
use crate::linalg::{cnorm, power_iteration_complex, ComplexMatrix, PowerOptions};
use crate::rng::{purpose, stream_id, stream_rng};
use crate::{Error, Result};

const SWEEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalEstimate {
    pub value: f64,
    /// Value of the plain operator at the witness used to seed restart 0.
    pub seed_value: f64,
    pub xi_grid: usize,
    pub history: Vec<f64>,
    #[serde(skip)]
    pub f: Vec<Complex64>,
    #[serde(skip)]
    pub gs: Vec<Vec<Complex64>>,
}

struct PhaseSelector {
    fft: Arc<dyn Fft<f64>>,
    grid: usize,
    side: usize,
    half_width: i64,
}

impl PhaseSelector {
    fn new(grid: usize, side: usize, half_width: i64) -> Self {
        let fft = FftPlanner::new().plan_fft_inverse(grid);
        Self { fft, grid, side, half_width }
    }

    /// Per row `x`, the grid index maximising `|sum_y a(x,y) f(y) e^{i xi y}|`,
    /// lowest index on ties, and the maximal modulus.
    fn select(&self, a: &ComplexMatrix, f: &[Complex64]) -> (Vec<usize>, Vec<f64>) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid];
        let mut ks = Vec::with_capacity(self.side);
        let mut mags = Vec::with_capacity(self.side);
        for x in 0..self.side {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (j, fy) in f.iter().enumerate() {
                let y = j as i64 - self.half_width;
                buf[y.rem_euclid(self.grid as i64) as usize] = a.data[x * self.side + j] * fy;
            }
            self.fft.process(&mut buf);
            let (k, m) = buf
                .iter()
                .map(|c| c.norm())
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, m)| if m > best.1 { (k, m) } else { best });
            ks.push(k);
            mags.push(m);
        }
        (ks, mags)
    }

    fn phase(&self, k: usize, y: i64) -> Complex64 {
        let r = (k as i64 * y).rem_euclid(self.grid as i64) as f64;
        Complex64::from_polar(1.0, std::f64::consts::TAU * r / self.grid as f64)
    }

    /// `b(x, y) = e^{i xi_{k(x)} y} a(x, y)`.
    fn modulate(&self, a: &ComplexMatrix, ks: &[usize]) -> ComplexMatrix {
        let mut b = a.clone();
        for (x, &k) in ks.iter().enumerate() {
            for j in 0..self.side {
                let y = j as i64 - self.half_width;
                b.data[x * self.side + j] *= self.phase(k, y);
            }
        }
        b
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|m| m * m).sum::<f64>().sqrt()
}

fn check_grid(inst: &MultilinearInstance, xi_grid: usize) -> Result<()> {
    let need = 4 * inst.half_width() as usize;
    if xi_grid < need || xi_grid < inst.side() {
        return Err(Error::InvalidParameter(format!("xi grid {xi_grid} below 4 A N = {need}")));
    }
    Ok(())
}

/// `||T*(f, g)||_2` on the frequency grid.
pub fn maximal_value(inst: &MultilinearInstance, f: &[Complex64], gs: &[Vec<Complex64>], xi_grid: usize) -> Result<f64> {
    check_grid(inst, xi_grid)?;
    let layout = Layout::new(inst);
    if gs.len() != layout.degree() {
        return Err(Error::Arity { expected: layout.degree(), got: gs.len() });
    }
    let sel = PhaseSelector::new(xi_grid, layout.side, layout.half_width);
    let (_, mags) = sel.select(&layout.complex_matrix(gs), f);
    Ok(l2(&mags))
}

/// `(value, f, gs, history)` of one restart.
type Run = (f64, Vec<Complex64>, Vec<Vec<Complex64>>, Vec<f64>);

fn ascend(
    layout: &Layout,
    sel: &PhaseSelector,
    mut f: Vec<Complex64>,
    mut gs: Vec<Vec<Complex64>>,
    iters: usize,
) -> Run {
    let opts = PowerOptions::default();
    let fnorm = cnorm(&f);
    if fnorm > 0.0 {
        f.iter_mut().for_each(|v| *v /= fnorm);
    }
    let mut history = Vec::new();
    let mut value = 0.0;
    for _ in 0..iters.max(1) {
        let before = value;
        let a = layout.complex_matrix(&gs);
        let (ks, mags) = sel.select(&a, &f);
        value = f64::max(value, l2(&mags));
        let b = sel.modulate(&a, &ks);
        let t = power_iteration_complex(&b, &f, opts);
        if t.sigma >= l2(&mags) {
            f = t.right;
        }
        let (ks, mags) = sel.select(&a, &f);
        value = value.max(l2(&mags));
        history.push(value);
        if value == 0.0 {
            break;
        }
        let b = sel.modulate(&a, &ks);
        let mut bf = vec![Complex64::new(0.0, 0.0); layout.side];
        b.apply(&f, &mut bf);
        let scale = cnorm(&bf);
        let u: Vec<Complex64> = bf.iter().map(|v| v.conj() / scale).collect();
        for j in 0..layout.degree() {
            let mut c = vec![Complex64::new(0.0, 0.0); layout.slot_len[j]];
            for (pos, &k) in layout.kvals.iter().enumerate() {
                if k == 0.0 {
                    continue;
                }
                let (x, y) = (pos / layout.side, pos % layout.side);
                let phase = sel.phase(ks[x], y as i64 - layout.half_width);
                let rest = layout.slot_product(&gs, pos, Some(j));
                c[layout.slot_idx[j][pos] as usize] += u[x] * phase * f[y] * rest * k;
            }
            for (g, cj) in gs[j].iter_mut().zip(&c) {
                let m = cj.norm();
                if m > 0.0 {
                    *g = cj.conj() / m;
                }
            }
        }
        let (_, mags) = sel.select(&layout.complex_matrix(&gs), &f);
        value = value.max(l2(&mags));
        history.push(value);
        if value - before <= SWEEP_TOL * value {
            break;
        }
    }
    (value, f, gs, history)
}

/// Lower bound on `||T*||_op`. Restart 0 starts from the real witness of the
/// plain operator ascent, so the estimate dominates that of `||T||_op`.
pub fn maximal_norm_lower(
    inst: &MultilinearInstance,
    xi_grid: usize,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<MaximalEstimate> {
    check_grid(inst, xi_grid)?;
    let layout = Layout::new(inst);
    let sel = PhaseSelector::new(xi_grid, layout.side, layout.half_width);
    let to_c = |v: &[f64]| v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>();
    let (seed_f, seed_gs, seed_value) = if layout.degree() == 0 {
        let f = vec![1.0 / (layout.side as f64).sqrt(); layout.side];
        (to_c(&f), Vec::new(), 0.0)
    } else {
        let plain = super::op_norm_lower(inst, restarts.max(1), iters, seed)?;
        (to_c(&plain.f), plain.gs.iter().map(|g| to_c(g)).collect(), plain.value)
    };
    let runs: Vec<Run> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            if r == 0 {
                return ascend(&layout, &sel, seed_f.clone(), seed_gs.clone(), iters);
            }
            let mut rng = stream_rng(seed, stream_id(&[purpose::RESTART, 1 << 32 | r as u64]));
            let f: Vec<Complex64> = (0..layout.side)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let gs = layout
                .slot_len
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
                        .collect()
                })
                .collect();
            ascend(&layout, &sel, f, gs, iters)
        })
        .collect();
    let (value, f, gs, history) = runs
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one restart");
    Ok(MaximalEstimate { value, seed_value, xi_grid, history, f, gs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_measure::{sample_r, SelectorModel, SignedMeasure};

    #[test]
    fn delta_kernel_without_slots() {
        let k = SignedMeasure::from_points(4, &[(0, 1.0)]).unwrap();
        let inst = MultilinearInstance::new("1,-1".parse().unwrap(), k, 1, 4).unwrap();
        let est = maximal_norm_lower(&inst, 32, 3, 30, 0).unwrap();
        assert!((est.value - 1.0).abs() < 1e-9);
        let f: Vec<Complex64> = (0..9).map(|i| Complex64::new(i as f64 - 4.0, 1.0)).collect();
        let norm = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((maximal_value(&inst, &f, &[], 32).unwrap() - norm).abs() < 1e-12);
    }

    #[test]
    fn dominates_plain_operator() {
        let r = sample_r(&SelectorModel::new(4, 0.5, 3, 0).unwrap());
        let inst = MultilinearInstance::new("1,-1; 1,1".parse().unwrap(), r, 1, 4).unwrap();
        let est = maximal_norm_lower(&inst, 64, 4, 40, 7).unwrap();
        assert!(est.value >= est.seed_value * (1.0 - 1e-12));
        assert!(est.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn small_grid_is_refused() {
        let inst = MultilinearInstance::new("1,-1".parse().unwrap(), SignedMeasure::zero(4), 1, 4).unwrap();
        assert!(maximal_norm_lower(&inst, 8, 1, 1, 0).is_err());
    }
}
