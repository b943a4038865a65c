//! Independent oracles for the library routines: double loops, dense matrices,
//! closed forms and Monte Carlo means.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use multiform::finite_group::{dft, GroupFunction, GroupSpec};
use multiform::harness::fit_exponent;
use multiform::linalg::dense_spectral_norm;
use multiform::linear_forms::{change_of_variables, FormFamily, LinearForm};
use multiform::operator::{apply_t, bilinear_norm_exact, maximal_norm_lower, scalar_form, FunctionVec, MultilinearInstance};
use multiform::random_matrix::{
    chernoff_tail_check, matrix_form, row_sum_scan, sample_matrix, MatrixModel, PairSet,
};
use multiform::random_measure::{r_moment, sample_r, shifted_product, SelectorModel, ShiftTuple, SignedMeasure};
use multiform::reduction::{verify_cs_step, FormInstance};
use multiform::rng::{stream_id, stream_rng};
use multiform::stats::MeanEstimate;

fn gaussian_fn(hw: i64, seed: u64, stream: u64) -> FunctionVec {
    let mut rng = stream_rng(seed, stream);
    FunctionVec::from_fn(hw, |_| rng.sample(StandardNormal))
}

/// `L(x, y)` or `None` off the integers, without going through the library.
fn eval(l: &LinearForm, x: i64, y: i64) -> Option<i64> {
    let num = l.a() * x + l.b() * y;
    (num % l.den() == 0).then(|| num / l.den())
}

#[test]
fn plancherel_against_direct_summation() {
    let spec = GroupSpec::new(5, 1).unwrap();
    let mut rng = stream_rng(1, 1);
    let f = GroupFunction::from_fn(spec, |_| {
        num_complex::Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let p = spec.p() as f64;
    let direct: Vec<num_complex::Complex64> = (0..spec.order())
        .map(|xi| {
            let xi = spec.coords(xi);
            (0..spec.order())
                .map(|x| {
                    let x = spec.coords(x);
                    let dot: u64 = xi.iter().zip(&x).map(|(a, b)| a * b).sum::<u64>() % spec.p();
                    f.values()[spec.index(&x)] * num_complex::Complex64::from_polar(1.0, -std::f64::consts::TAU * dot as f64 / p)
                })
                .sum()
        })
        .collect();
    let fast = dft(&f);
    for (a, b) in fast.values().iter().zip(&direct) {
        assert!((a - b).norm() < 1e-10);
    }
    let lhs: f64 = direct.iter().map(|v| v.norm_sqr()).sum();
    let rhs = p.powi(2) * f.values().iter().map(|v| v.norm_sqr()).sum::<f64>();
    assert!((lhs - rhs).abs() < 1e-9 * rhs);
}

#[test]
fn change_of_variables_on_a_grid() {
    let family: FormFamily = "1,-1; 1,1; 1,-2".parse().unwrap();
    let cov = change_of_variables(&family).unwrap();
    assert_eq!(cov.lambda, 1);
    assert_eq!(cov.family.kernel().den(), 3);
    for x in -10..10 {
        for y in -10..10 {
            let (u, v) = cov.image(x, y);
            assert_eq!((u, v), (x + y, x - 2 * y));
            for (old, new) in family.forms().iter().zip(cov.family.forms()) {
                assert_eq!(eval(old, x, y), eval(new, u, v));
            }
        }
    }
}

#[test]
fn apply_t_matches_dense_convolution() {
    let n = 16;
    let r = sample_r(&SelectorModel::new(n as u64, 0.25, 3, 0).unwrap());
    let family: FormFamily = "1,-1; 1,1".parse().unwrap();
    let inst = MultilinearInstance::new(family.clone(), r.clone(), 1, n).unwrap();
    let f = gaussian_fn(n, 3, 1);
    let ones = vec![FunctionVec::constant(inst.slot_half_width(0), 1.0)];
    let out = apply_t(&inst, &f, &ones).unwrap();
    let l0 = family.kernel();
    for x in -n..=n {
        let direct: f64 = (-n..=n).map(|y| f.get(y) * eval(&l0, x, y).map_or(0.0, |t| r.get(t))).sum();
        assert!((out.get(x) - direct).abs() < 1e-10, "x = {x}");
    }
}

#[test]
fn scalar_form_with_indicator_sums_the_fiber() {
    let n = 8;
    let r = sample_r(&SelectorModel::new(n as u64, 0.5, 4, 0).unwrap());
    let family: FormFamily = "1,-1; 1,1; 1,2".parse().unwrap();
    let inst = MultilinearInstance::scalar(family.clone(), r.clone(), 1, n).unwrap();
    let set = [-7i64, -2, 0, 3, 5, 11];
    let hw1 = inst.slot_half_width(0);
    let indicator = FunctionVec::from_fn(hw1, |t| if set.contains(&t) { 1.0 } else { 0.0 });
    let ones = FunctionVec::constant(inst.slot_half_width(1), 1.0);
    let value = scalar_form(&inst, &[indicator, ones]).unwrap();
    let mut direct = 0.0;
    for x in -n..=n {
        for y in -n..=n {
            if set.contains(&(x + y)) {
                direct += r.get(x - y);
            }
        }
    }
    assert!((value - direct).abs() < 1e-10);
}

#[test]
fn bilinear_norm_against_dense_convolution() {
    let n = 32i64;
    for seed in 0..5 {
        let r = sample_r(&SelectorModel::new(n as u64, 0.5, seed, 0).unwrap());
        let symbol = bilinear_norm_exact(&r, 64).unwrap().value;
        // Finite sections of the convolution increase towards the symbol sup;
        // the section on [-N, N] itself sits 15-25% below it.
        let mut previous = 0.0;
        for k in [1i64, 2, 4] {
            let side = (2 * k * n + 1) as usize;
            let m = DMatrix::from_fn(side, side, |i, j| r.get(i as i64 - j as i64));
            let dense = dense_spectral_norm(&m);
            assert!(previous <= dense && dense <= symbol * (1.0 + 1e-9), "seed {seed}, K = {k}");
            previous = dense;
        }
        assert!((symbol - previous) / symbol < 0.05, "seed {seed}: symbol {symbol}, dense {previous}");
    }
}

#[test]
fn maximal_grid_refinement() {
    let n = 8i64;
    let r = sample_r(&SelectorModel::new(n as u64, 0.5, 8, 0).unwrap());
    let inst = MultilinearInstance::new("1,-1; 1,1".parse().unwrap(), r, 1, n).unwrap();
    let coarse = maximal_norm_lower(&inst, 64 * n as usize, 10, 60, 8).unwrap().value;
    let fine = maximal_norm_lower(&inst, 256 * n as usize, 10, 60, 8).unwrap().value;
    assert!((coarse - fine).abs() / fine < 0.02, "{coarse} vs {fine}");
}

#[test]
fn cauchy_schwarz_expansion_by_brute_force() {
    let n = 8i64;
    let family: FormFamily = "1,-1; 1,0; 0,1".parse().unwrap();
    for seed in 0..4 {
        let r = sample_r(&SelectorModel::new(n as u64, 0.5, seed, 0).unwrap());
        let (f1, f2) = (gaussian_fn(n, seed, 1), gaussian_fn(n, seed, 2));
        let inst = FormInstance::new(&family, r.clone(), ShiftTuple::single(0), vec![f1.clone(), f2.clone()], n).unwrap();
        let (inst, _) = inst.normalize().unwrap();
        let report = verify_cs_step(&inst).unwrap();
        // T = sum_x f1(x) G(x), G(x) = sum_y f2(y) r(x - y)
        let g: Vec<f64> = (-n..=n).map(|x| (-n..=n).map(|y| f2.get(y) * r.get(x - y)).sum()).collect();
        let t: f64 = (-n..=n).zip(&g).map(|(x, gx)| f1.get(x) * gx).sum();
        let f1_sq: f64 = f1.values().iter().map(|v| v * v).sum();
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        assert!((report.lhs2 - t * t).abs() <= 1e-9 * (t * t).max(1.0));
        assert!((report.signed_rhs - f1_sq * g_sq).abs() <= 1e-9 * f1_sq * g_sq);
        assert!(report.lhs2 <= report.rhs * (1.0 + 1e-9));
    }
}

#[test]
fn matrix_form_against_double_loop() {
    let n = 8i64;
    let family: FormFamily = "1,0; 0,1; 1,1".parse().unwrap();
    let sample = sample_matrix(&MatrixModel::new(n as u64, 0.3, 9, 0).unwrap());
    let dense = sample.to_dense();
    let fs: Vec<FunctionVec> = family
        .forms()
        .iter()
        .enumerate()
        .map(|(j, l)| gaussian_fn(l.range_half_width(n, n), 9, j as u64))
        .collect();
    let value = matrix_form(&sample, &family, &fs).unwrap();
    let mut direct = 0.0;
    for x in -n..=n {
        for y in -n..=n {
            let mut term = dense[((x + n) as usize, (y + n) as usize)];
            for (l, f) in family.forms().iter().zip(&fs) {
                term *= eval(l, x, y).map_or(0.0, |t| f.get(t));
            }
            direct += term;
        }
    }
    assert!((value - direct).abs() < 1e-9 * direct.abs().max(1.0));
}

#[test]
fn matrix_row_mean_is_np() {
    let (n, p) = (32u64, 0.3);
    let model = MatrixModel::new(n, p, 10, 0).unwrap();
    let counts: Vec<f64> = (0..2000u64)
        .map(|t| sample_matrix(&model.with_stream(stream_id(&[10, t]))).row_counts()[n as usize] as f64)
        .collect();
    let est = MeanEstimate::from_samples(&counts);
    assert!(est.z_score((2 * n + 1) as f64 * p).abs() < 4.0);
}

#[test]
fn sum_over_pairs_has_mean_zero_and_exact_variance() {
    for p in [0.1, 0.5] {
        let model = MatrixModel::new(16, p, 11, 0).unwrap();
        let report = chernoff_tail_check(&model, &PairSet::full(16), &[1.0], 20_000, 11).unwrap();
        assert!(report.mean.z_score(0.0).abs() < 4.0);
        let exact = report.pairs as f64 * p * (1.0 - p);
        assert!((report.variance - exact).abs() < 4.0 * report.variance_stderr, "{} vs {exact}", report.variance);
    }
}

#[test]
fn kernel_mean_vanishes_at_a_fixed_point() {
    let (n, p) = (16u64, 0.25);
    let model = SelectorModel::new(n, p, 12, 0).unwrap();
    for x in [-16i64, 0, 7] {
        let values: Vec<f64> =
            (0..100_000u64).map(|t| sample_r(&model.with_stream(stream_id(&[12, t]))).get(x)).collect();
        assert!(MeanEstimate::from_samples(&values).z_score(0.0).abs() < 4.0);
    }
}

#[test]
fn second_moment_closed_form() {
    for (n, p) in [(8u64, 0.25), (20, 0.5), (5, 1.0)] {
        // r takes 1/(Np) - 1/N with probability p and -1/N otherwise.
        let (hi, lo) = (1.0 / (n as f64 * p) - 1.0 / n as f64, -1.0 / n as f64);
        let direct = p * hi * hi + (1.0 - p) * lo * lo;
        assert!((r_moment(2, n, p) - direct).abs() < 1e-15);
        assert!(r_moment(2, n, p) <= (n as f64 * p).powi(-2) * p + 1e-15);
    }
}

#[test]
fn shifted_product_energy_matches_moments() {
    let (n, p, c) = (10u64, 0.3, 4i64);
    let model = SelectorModel::new(n, p, 13, 0).unwrap();
    let z = ShiftTuple::new(vec![0, c]).unwrap();
    let energies: Vec<f64> = (0..10_000u64)
        .map(|t| shifted_product(&sample_r(&model.with_stream(stream_id(&[13, t]))), &z, false, n).l2_norm_sq())
        .collect();
    let overlap = (2 * n as i64 + 1 - c) as f64;
    let exact = overlap * r_moment(2, n, p).powi(2);
    let est = MeanEstimate::from_samples(&energies);
    assert!(est.z_score(exact).abs() < 4.0, "{} vs {exact}", est.mean);
}

#[test]
fn row_sums_grow_at_most_logarithmically() {
    let n_list: Vec<u64> = (6..=12).map(|k| 1u64 << k).collect();
    let scan = row_sum_scan(&n_list, 0.3, 0.5, 40, 14).unwrap();
    assert!(scan.power_fit.ci_high < 1.0);
    let per_log = |c: &multiform::random_matrix::RowSumCell| c.sup.mean / (2.0 + c.n as f64).ln();
    assert!(per_log(scan.cells.last().unwrap()) <= per_log(&scan.cells[0]));
    for c in &scan.cells {
        // E sum_y |r(0, y)| = (2N + 1) 2 (1 - p) / N
        let expected = (2 * c.n + 1) as f64 * 2.0 * (1.0 - c.p) / c.n as f64;
        assert!(c.single_row.z_score(expected).abs() < 4.0, "N = {}", c.n);
        assert!(c.sup.mean >= c.single_row.mean);
    }
}

#[test]
fn noisy_power_law_is_recovered() {
    let mut rng = stream_rng(15, 0);
    let points: Vec<(u64, f64)> = (4..=14)
        .map(|k| {
            let n = 1u64 << k;
            let noise: f64 = rng.sample(StandardNormal);
            (n, (n as f64).powf(-0.7) * (1.0 + 0.01 * noise))
        })
        .collect();
    let fit = fit_exponent(&points).unwrap().fit;
    assert!(fit.contains(-0.7), "{fit:?}");
    let flat: Vec<(u64, f64)> = (3..=8).map(|k| (1u64 << k, 2.5)).collect();
    assert!(fit_exponent(&flat).unwrap().fit.slope.abs() < 1e-12);
}

#[test]
fn point_mass_kernels() {
    let delta = SignedMeasure::from_points(4, &[(0, 1.0)]).unwrap();
    assert!((bilinear_norm_exact(&delta, 16).unwrap().value - 1.0).abs() < 1e-12);
    let diff = SignedMeasure::from_points(4, &[(0, 1.0), (1, -1.0)]).unwrap();
    assert!((bilinear_norm_exact(&diff, 64).unwrap().value - 2.0).abs() < 1e-4);
}
