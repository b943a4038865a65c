//! Operator norm `sup ||T(f, g_1..g_M)||_2` over `||f||_2 <= 1`, `||g_j||_inf <= 1`.
//!
//! With the `g_j` fixed, `T` is a matrix in `f` and the best `f` is its top right
//! singular vector. With `f` and the dual vector `u = T f / ||T f||` fixed,
//! `<u, T f>` is linear in each `g_j`, so the best real `g_j` is a sign vector.
//! Alternating the two updates never decreases `||T f||`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{witness_hash, Layout, MultilinearInstance};
use crate::linalg::{norm, power_iteration, DenseMatrix, LinearOperator, PowerOptions};
use crate::rng::{purpose, stream_id, stream_rng};
use crate::{Error, Result};

/// Sign patterns beyond `2^BRUTE_FORCE_CAP_BITS` are refused.
pub const BRUTE_FORCE_CAP_BITS: u32 = 27;

const SWEEP_TOL: f64 = 1e-12;
const KICKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub f: Vec<f64>,
    pub gs: Vec<Vec<f64>>,
    /// Objective after every half-step of the winning restart.
    pub history: Vec<f64>,
    pub best_restart: usize,
    pub witness_hash: u64,
}

struct Ascent {
    value: f64,
    f: Vec<f64>,
    gs: Vec<Vec<f64>>,
    history: Vec<f64>,
}

/// Matrix positions read by each coordinate of each `g_j`.
fn slot_positions(layout: &Layout) -> Vec<Vec<Vec<usize>>> {
    (0..layout.degree())
        .map(|j| {
            let mut out = vec![Vec::new(); layout.slot_len[j]];
            for (pos, &k) in layout.kvals.iter().enumerate() {
                if k != 0.0 {
                    out[layout.slot_idx[j][pos] as usize].push(pos);
                }
            }
            out
        })
        .collect()
}

/// Single sign flips of the `g_j` that increase `||A f||` with `f` fixed.
/// Flipping `g_j(t)` negates exactly the entries at `positions[j][t]`.
fn flip_sweep(
    layout: &Layout,
    positions: &[Vec<Vec<usize>>],
    a: &mut DenseMatrix,
    gs: &mut [Vec<f64>],
    f: &[f64],
    av: &mut [f64],
) -> bool {
    let side = layout.side;
    a.apply(f, av);
    let mut current: f64 = av.iter().map(|v| v * v).sum();
    let mut dv = vec![0.0; side];
    let mut touched: Vec<usize> = Vec::new();
    let mut improved = false;
    for (j, slot) in positions.iter().enumerate() {
        for (t, pos_list) in slot.iter().enumerate() {
            if pos_list.is_empty() {
                continue;
            }
            let data = a.data();
            for &pos in pos_list {
                let (x, y) = (pos / side, pos % side);
                if dv[x] == 0.0 {
                    touched.push(x);
                }
                dv[x] -= 2.0 * data[pos] * f[y];
            }
            let delta: f64 = touched.iter().map(|&x| dv[x] * (2.0 * av[x] + dv[x])).sum();
            if delta > SWEEP_TOL * current.max(f64::MIN_POSITIVE) {
                gs[j][t] = -gs[j][t];
                let data = a.data_mut();
                for &pos in pos_list {
                    data[pos] = -data[pos];
                }
                for &x in &touched {
                    av[x] += dv[x];
                }
                current += delta;
                improved = true;
            }
            for &x in &touched {
                dv[x] = 0.0;
            }
            touched.clear();
        }
    }
    improved
}

/// Best `(f, g)` from one starting point: `g_j` signs drawn at random except for
/// restart 0, which starts from `g_j = 1`. The local optimum is then kicked by
/// flipping a few random signs and re-ascended, keeping the best point found.
fn ascend(layout: &Layout, positions: &[Vec<Vec<usize>>], restart: usize, iters: usize, seed: u64) -> Ascent {
    let mut rng = stream_rng(seed, stream_id(&[purpose::RESTART, restart as u64]));
    let gs: Vec<Vec<f64>> = layout
        .slot_len
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| if restart == 0 || rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let f: Vec<f64> = (0..layout.side).map(|_| rng.sample(StandardNormal)).collect();
    let mut best = local_ascent(layout, positions, gs, f, iters);
    let used: Vec<(usize, usize)> = positions
        .iter()
        .enumerate()
        .flat_map(|(j, slot)| slot.iter().enumerate().filter(|(_, p)| !p.is_empty()).map(move |(t, _)| (j, t)))
        .collect();
    if best.value == 0.0 || used.is_empty() {
        return best;
    }
    let kick = (used.len() / 8).max(1);
    for _ in 0..KICKS {
        let mut gs = best.gs.clone();
        for _ in 0..kick {
            let (j, t) = used[rng.random_range(0..used.len())];
            gs[j][t] = -gs[j][t];
        }
        let trial = local_ascent(layout, positions, gs, best.f.clone(), iters);
        if trial.value > best.value * (1.0 + SWEEP_TOL) {
            let mut history = std::mem::take(&mut best.history);
            history.push(trial.value);
            best = Ascent { history, ..trial };
        }
    }
    best
}

fn local_ascent(layout: &Layout, positions: &[Vec<Vec<usize>>], mut gs: Vec<Vec<f64>>, mut f: Vec<f64>, iters: usize) -> Ascent {
    let opts = PowerOptions::default();
    let mut value: f64 = 0.0;
    let mut history = Vec::new();
    let mut av = vec![0.0; layout.side];
    for _ in 0..iters.max(1) {
        let before = value;
        let mut a = layout.real_matrix(&gs);
        let t = power_iteration(&a, &f, opts);
        a.apply(&f, &mut av);
        let current = norm(&av) / norm(&f).max(f64::MIN_POSITIVE);
        if t.sigma >= current {
            f = t.right;
            value = value.max(t.sigma);
        } else {
            value = value.max(current);
        }
        history.push(value);
        if value == 0.0 {
            break;
        }
        a.apply(&f, &mut av);
        let scale = norm(&av);
        let u: Vec<f64> = av.iter().map(|v| v / scale).collect();
        let linear = gs.clone();
        for j in 0..layout.degree() {
            let mut c = vec![0.0; layout.slot_len[j]];
            for (pos, &k) in layout.kvals.iter().enumerate() {
                if k == 0.0 {
                    continue;
                }
                let (x, y) = (pos / layout.side, pos % layout.side);
                let w = u[x] * f[y];
                if w == 0.0 {
                    continue;
                }
                c[layout.slot_idx[j][pos] as usize] += w * k * layout.slot_product(&gs, pos, Some(j));
            }
            for (g, cj) in gs[j].iter_mut().zip(&c) {
                if *cj > 0.0 {
                    *g = 1.0;
                } else if *cj < 0.0 {
                    *g = -1.0;
                }
            }
        }
        let b = layout.real_matrix(&gs);
        b.apply(&f, &mut av);
        if norm(&av) >= scale {
            a = b;
        } else {
            gs = linear;
        }
        while flip_sweep(layout, positions, &mut a, &mut gs, &f, &mut av) {}
        a.apply(&f, &mut av);
        value = value.max(norm(&av));
        history.push(value);
        if value - before <= SWEEP_TOL * value {
            break;
        }
    }
    let fnorm = norm(&f);
    if fnorm > 0.0 {
        f.iter_mut().for_each(|v| *v /= fnorm);
    }
    Ascent { value, f, gs, history }
}

/// Lower bound on `||T||_op` by alternating ascent, best over `restarts`
/// independent starting points. The result does not depend on scheduling.
pub fn op_norm_lower(inst: &MultilinearInstance, restarts: usize, iters: usize, seed: u64) -> Result<NormEstimate> {
    if inst.degree() < 1 {
        return Err(Error::InvalidParameter("operator norm ascent needs M >= 1".into()));
    }
    let layout = Layout::new(inst);
    let positions = slot_positions(&layout);
    let runs: Vec<Ascent> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| ascend(&layout, &positions, r, iters, seed))
        .collect();
    Ok(best_of(runs))
}

fn best_of(runs: Vec<Ascent>) -> NormEstimate {
    let (best_restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.value > a.1.value { b } else { a })
        .expect("at least one restart");
    NormEstimate {
        value: best.value,
        witness_hash: witness_hash(&best.f, &best.gs),
        f: best.f,
        gs: best.gs,
        history: best.history,
        best_restart,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceNorm {
    pub value: f64,
    pub gs: Vec<Vec<f64>>,
    pub patterns: u64,
}

fn top_singular_exact(a: &DenseMatrix, side: usize) -> f64 {
    let m = DMatrix::from_row_slice(side, side, a.data());
    let gram = m.transpose() * &m;
    gram.symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// Exact real operator norm by enumerating every sign pattern of the `g_j` on the
/// coordinates the window actually reads. The first read coordinate of each
/// `g_j` is pinned to `+1`, since flipping a whole `g_j` only flips the sign of `T`.
pub fn op_norm_bruteforce(inst: &MultilinearInstance) -> Result<BruteForceNorm> {
    let side = inst.side();
    if inst.degree() > 3 || side > 9 {
        return Err(Error::TooLarge(format!("M = {}, {side} points per axis", inst.degree())));
    }
    let layout = Layout::new(inst);
    let mut used: Vec<Vec<usize>> = vec![Vec::new(); layout.degree()];
    for (j, u) in used.iter_mut().enumerate() {
        let mut seen = vec![false; layout.slot_len[j]];
        for (pos, &k) in layout.kvals.iter().enumerate() {
            if k != 0.0 {
                seen[layout.slot_idx[j][pos] as usize] = true;
            }
        }
        *u = seen.iter().enumerate().filter(|(_, s)| **s).map(|(t, _)| t).collect();
    }
    // free bits: (slot, coordinate) pairs other than the pinned first coordinate
    let bits: Vec<(usize, usize)> = used
        .iter()
        .enumerate()
        .flat_map(|(j, coords)| coords.iter().skip(1).map(move |&t| (j, t)))
        .collect();
    if bits.len() as u32 > BRUTE_FORCE_CAP_BITS {
        return Err(Error::TooLarge(format!("2^{} sign patterns", bits.len())));
    }
    let flips: Vec<Vec<usize>> = bits
        .iter()
        .map(|&(j, t)| {
            (0..layout.kvals.len())
                .filter(|&pos| layout.kvals[pos] != 0.0 && layout.slot_idx[j][pos] as usize == t)
                .collect()
        })
        .collect();
    let mut gs: Vec<Vec<f64>> = layout.slot_len.iter().map(|&n| vec![1.0; n]).collect();
    let mut a = layout.real_matrix(&gs);
    let mut best = top_singular_exact(&a, side);
    let mut best_gs = gs.clone();
    let patterns = 1u64 << bits.len();
    for step in 1..patterns {
        let bit = step.trailing_zeros() as usize;
        let (j, t) = bits[bit];
        gs[j][t] = -gs[j][t];
        let data = a.data_mut();
        for &pos in &flips[bit] {
            data[pos] = -data[pos];
        }
        let s = top_singular_exact(&a, side);
        if s > best {
            best = s;
            best_gs = gs.clone();
        }
    }
    Ok(BruteForceNorm { value: best, gs: best_gs, patterns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{apply_t, FunctionVec};
    use crate::random_measure::{sample_r, SelectorModel, SignedMeasure};

    fn instance(fam: &str, n: i64, seed: u64) -> MultilinearInstance {
        let r = sample_r(&SelectorModel::new(n as u64, 0.5, seed, 0).unwrap());
        MultilinearInstance::new(fam.parse().unwrap(), r, 1, n).unwrap()
    }

    #[test]
    fn delta_kernel_has_unit_norm() {
        let k = SignedMeasure::from_points(3, &[(0, 1.0)]).unwrap();
        let inst = MultilinearInstance::new("1,-1; 1,1".parse().unwrap(), k, 1, 3).unwrap();
        assert!((op_norm_bruteforce(&inst).unwrap().value - 1.0).abs() < 1e-12);
        assert!((op_norm_lower(&inst, 4, 50, 1).unwrap().value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let inst = MultilinearInstance::new("1,-1; 1,1".parse().unwrap(), SignedMeasure::zero(3), 1, 3).unwrap();
        assert_eq!(op_norm_lower(&inst, 3, 20, 0).unwrap().value, 0.0);
        assert_eq!(op_norm_bruteforce(&inst).unwrap().value, 0.0);
    }

    #[test]
    fn lower_bound_never_exceeds_bruteforce() {
        for seed in 0..6 {
            let inst = instance("1,-1; 1,1", 3, seed);
            let exact = op_norm_bruteforce(&inst).unwrap().value;
            let lower = op_norm_lower(&inst, 20, 100, seed).unwrap().value;
            assert!(lower <= exact * (1.0 + 1e-9), "{lower} > {exact}");
            assert!(lower >= exact * (1.0 - 1e-3), "{lower} << {exact}");
        }
    }

    #[test]
    fn history_is_monotone() {
        let inst = instance("1,-1; 1,1; 1,2", 4, 5);
        let est = op_norm_lower(&inst, 3, 60, 9).unwrap();
        assert!(est.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn witness_attains_value() {
        let inst = instance("1,-1; 1,1; 2,1", 4, 2);
        let est = op_norm_lower(&inst, 5, 60, 3).unwrap();
        let f = FunctionVec::new(4, est.f.clone()).unwrap();
        let gs: Vec<_> = est
            .gs
            .iter()
            .enumerate()
            .map(|(j, g)| FunctionVec::new(inst.slot_half_width(j), g.clone()).unwrap())
            .collect();
        let out = apply_t(&inst, &f, &gs).unwrap();
        assert!((out.norm2() - est.value).abs() < 1e-9 * est.value);
    }

    #[test]
    fn homogeneous_in_kernel() {
        let inst = instance("1,-1; 1,1", 2, 4);
        let doubled = inst.with_kernel(inst.kernel().scaled(2.0)).unwrap();
        let a = op_norm_bruteforce(&inst).unwrap().value;
        let b = op_norm_bruteforce(&doubled).unwrap().value;
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn deterministic_across_runs() {
        let inst = instance("1,-1; 1,1; 1,2", 3, 8);
        assert_eq!(op_norm_lower(&inst, 6, 40, 11).unwrap(), op_norm_lower(&inst, 6, 40, 11).unwrap());
    }

    #[test]
    fn oversized_instances_are_refused() {
        let inst = instance("1,-1; 1,1", 5, 0);
        assert!(matches!(op_norm_bruteforce(&inst), Err(Error::TooLarge(_))));
    }
}
