mod common;

use cmf_core::gram::GramSystem;
use cmf_core::solvers::{batch_solve, cg_solve_traced};
use cmf_core::*;
use common::*;
use rand::Rng;

/// Normal-equation systems like those ALS produces: `Σ θθᵀ + λ·n·I` with
/// `n ≥ f` random factor rows.
fn gram_like(f: usize, rng: &mut rand_chacha::ChaCha8Rng) -> SymMatrix {
    let n = rng.random_range(f..=4 * f);
    let rows: Vec<f32> = (0..n * f).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let theta = FactorMatrix::from_vec(n, f, rows).unwrap();
    let lambda = 0.05 * n as f64;
    to_sym(&dense_gram(&(0..n as u32).collect::<Vec<_>>(), &theta, lambda))
}

#[test]
fn cg_with_full_iterations_matches_exact() {
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let mut rng = rng(300 + trial);
        let f = rng.random_range(1..=32);
        let sym = gram_like(f, &mut rng);
        let b = random_vec(f, &mut rng);
        let exact = exact_solve(&sym, &b).unwrap();
        let mut x = vec![0.0; f];
        cg_solve(&sym, &mut x, &b, f, 0.0).unwrap();
        worst = worst.max(rel_err(&x, &exact));
    }
    assert!(worst <= 1e-4, "worst {worst:e}");
}

#[test]
fn exact_solve_matches_f64_oracle() {
    for trial in 0..50 {
        let mut rng = rng(400 + trial);
        let f = rng.random_range(1..=64);
        let a = random_spd(f, 1e2, Spectrum::Linear, &mut rng);
        let b = random_vec(f, &mut rng);
        let want = a.clone().cholesky().unwrap().solve(&nalgebra::DVector::from_iterator(f, b.iter().map(|&v| v as f64)));
        let want: Vec<f32> = want.iter().map(|&v| v as f32).collect();
        let got = exact_solve(&to_sym(&a), &b).unwrap();
        assert!(rel_err(&got, &want) < 1e-5);
    }
}

/// CG minimizes the A-norm of the error over growing Krylov spaces, so that
/// norm never increases.
#[test]
fn cg_error_a_norm_never_increases() {
    for trial in 0..100 {
        let mut rng = rng(500 + trial);
        let f = rng.random_range(2..=32);
        let sym = to_sym(&random_spd(f, 100.0, Spectrum::Linear, &mut rng));
        let b = random_vec(f, &mut rng);
        let a = sym_to_dense(&sym);
        let x_star = a.clone().cholesky().unwrap().solve(&nalgebra::DVector::from_iterator(f, b.iter().map(|&v| v as f64)));
        let scale = (x_star.transpose() * &a * &x_star)[(0, 0)].sqrt();
        let mut prev = f64::INFINITY;
        for k in 0..=f {
            let mut x = vec![0.0; f];
            cg_solve(&sym, &mut x, &b, k, 0.0).unwrap();
            let e = nalgebra::DVector::from_iterator(f, x.iter().map(|&v| v as f64)) - &x_star;
            let err = (e.transpose() * &a * &e)[(0, 0)].sqrt();
            assert!(err <= prev + 1e-5 * scale, "trial {trial} k {k}: {err} > {prev}");
            prev = err;
        }
    }
}

/// The residual 2-norm is not monotone in general: one step on
/// `diag(1, 100)` from `b = (10, 1)` multiplies it by about five.
#[test]
fn residual_norm_can_rise() {
    let a = SymMatrix::from_dense(2, &[1.0, 0.0, 0.0, 100.0]).unwrap();
    let mut x = vec![0.0; 2];
    let (_, trace) = cg_solve_traced(&a, &mut x, &[10.0, 1.0], 2, 0.0).unwrap();
    assert!(trace[1] > 4.0 * trace[0]);
    assert!(trace[2] < 1e-3);
}

#[test]
fn loose_tolerance_stops_after_one_update() {
    let mut rng = rng(600);
    let a = to_sym(&random_spd(12, 50.0, Spectrum::Linear, &mut rng));
    let b = random_vec(12, &mut rng);
    let norm: f32 = b.iter().map(|v| v * v).sum::<f32>().sqrt();
    let mut x = vec![0.0; 12];
    let out = cg_solve(&a, &mut x, &b, 10, 2.0 * norm).unwrap();
    assert_eq!(out.iterations, 1);
    // One update from zero: x = (rᵀr / rᵀAr) r with r = b.
    let mut ab = vec![0.0; 12];
    a.matvec(&b, &mut ab, &mut Vec::new());
    let alpha = b.iter().map(|v| v * v).sum::<f32>() / b.iter().zip(&ab).map(|(p, q)| p * q).sum::<f32>();
    for (xi, bi) in x.iter().zip(&b) {
        assert!((xi - alpha * bi).abs() <= 1e-6 * (1.0 + xi.abs()));
    }
}

#[test]
fn half_cg_tracks_single_precision() {
    for trial in 0..20 {
        let mut rng = rng(700 + trial);
        let a = to_sym(&random_spd(40, 20.0, Spectrum::Linear, &mut rng));
        let b = random_vec(40, &mut rng);
        let h = a.to_half().unwrap();
        assert_eq!(2 * h.storage_bytes(), a.storage_bytes());
        let (mut x32, mut x16) = (vec![0.0; 40], vec![0.0; 40]);
        cg_solve(&a, &mut x32, &b, 40, 0.0).unwrap();
        cg_solve_half(&h, &mut x16, &b, 40, 0.0).unwrap();
        assert!(rel_err(&x16, &x32) < 1e-2);
    }
    assert!(cg_solve_half(&SymMatrix::identity(2), &mut [0.0; 2], &[1.0, 1.0], 2, 0.0).is_err());
}

#[test]
fn batch_solve_reports_failing_rows() {
    let good = GramSystem::new(SymMatrix::identity(2), vec![1.0, 2.0], 1).unwrap();
    let bad = GramSystem::new(SymMatrix::from_dense(2, &[1.0, 2.0, 2.0, 1.0]).unwrap(), vec![1.0, 1.0], 1).unwrap();
    let mut x = vec![0.0; 4];
    let err = batch_solve(&[good.clone(), bad], &mut x, &SolverConfig::exact()).unwrap_err();
    match err {
        Error::SolveFailures(fails) => {
            assert_eq!(fails.len(), 1);
            assert!(matches!(fails[0], Error::NotPositiveDefinite { row: Some(1), .. }));
        }
        other => panic!("unexpected {other}"),
    }
    let mut x = vec![0.0; 2];
    batch_solve(&[good], &mut x, &SolverConfig::exact()).unwrap();
    assert_eq!(x, vec![1.0, 2.0]);
}

#[test]
fn batch_results_do_not_depend_on_worker_count() {
    let mut rng = rng(800);
    let systems: Vec<GramSystem> = (0..300)
        .map(|_| {
            let a = to_sym(&random_spd(16, 100.0, Spectrum::Linear, &mut rng));
            GramSystem::new(a, random_vec(16, &mut rng), 5).unwrap()
        })
        .collect();
    let run = |threads| {
        cmf_core::parallel::with_threads(threads, || {
            let mut x = vec![0.1; 300 * 16];
            batch_solve(&systems, &mut x, &SolverConfig::cg(6)).unwrap();
            x
        })
        .unwrap()
    };
    let base = run(1);
    assert_eq!(run(3), base);
    assert_eq!(run(8), base);
}
