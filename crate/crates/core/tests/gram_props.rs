mod common;

use cmf_core::gram::{packed_len, GramAssembler};
use cmf_core::implicit::precompute_gram;
use cmf_core::*;
use common::*;
use half::f16;
use proptest::prelude::*;
use rand::Rng;

/// Every finite binary16 value as (value, bits), ascending.
fn f16_table() -> Vec<(f64, u16)> {
    let mut t: Vec<(f64, u16)> = (0..=u16::MAX)
        .filter_map(|bits| {
            let exp = (bits >> 10) & 0x1f;
            let frac = (bits & 0x3ff) as f64;
            let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
            let v = match exp {
                0x1f => return None,
                0 => sign * frac * 2f64.powi(-24),
                e => sign * (1.0 + frac / 1024.0) * 2f64.powi(e as i32 - 15),
            };
            // Keep +0 only; -0 compares equal.
            (bits != 0x8000).then_some((v, bits))
        })
        .collect();
    t.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    t
}

/// Round-to-nearest-even onto the table; `None` means the value overflows.
fn oracle_round(table: &[(f64, u16)], x: f32) -> Option<f64> {
    let x = x as f64;
    let max = table.last().unwrap().0;
    // Halfway between the largest finite value and the next step rounds up.
    if x.abs() >= max + 16.0 {
        return None;
    }
    let i = table.partition_point(|e| e.0 < x);
    if i < table.len() && table[i].0 == x {
        return Some(x);
    }
    let (lo, hi) = (table[i.max(1) - 1], table[i.min(table.len() - 1)]);
    let (dlo, dhi) = (x - lo.0, hi.0 - x);
    Some(if dlo < dhi {
        lo.0
    } else if dhi < dlo {
        hi.0
    } else if lo.1 & 1 == 0 {
        lo.0
    } else {
        hi.0
    })
}

#[test]
fn pack_half_matches_bruteforce_rounding() {
    let table = f16_table();
    let mut rng = rng(16);
    let mut inputs: Vec<f32> = (0..200_000)
        .map(|_| {
            let mag = 2f32.powf(rng.random_range(-26.0..17.0));
            if rng.random::<bool>() { mag } else { -mag }
        })
        .collect();
    // Exact midpoints between neighbours exercise the tie rule.
    for w in table.windows(2).step_by(97) {
        inputs.push(((w[0].0 + w[1].0) / 2.0) as f32);
    }
    inputs.extend([0.0, 65504.0, 65519.0, -65519.0, 5.96e-8, 2.98e-8]);
    for x in inputs {
        let got = pack_half(&[x]);
        match oracle_round(&table, x) {
            Some(want) => assert_eq!(got.unwrap()[0].to_f64(), want, "input {x:e}"),
            None => assert!(got.is_err(), "input {x:e} should overflow"),
        }
    }
    assert!(matches!(pack_half(&[1.0, 70000.0]), Err(Error::HalfOverflow { index: 1, .. })));
    assert_eq!(f16::from_f32(1.0).to_f32(), 1.0);
}

fn instance(seed: u64) -> (SparseRatings, FactorMatrix, f32) {
    let mut rng = rng(seed);
    let m = rng.random_range(1..=60);
    let n = rng.random_range(1..=60);
    let f = rng.random_range(1..=32);
    let triples = random_ratings(m, n, rng.random_range(0.02..0.4), &mut rng);
    let data = SparseRatings::build(&triples, m, n).unwrap();
    let theta = FactorMatrix::random_uniform(n, f, 1.0, seed).unwrap();
    (data, theta, rng.random_range(0.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tiled_assembly_matches_dense_oracle(seed in any::<u64>()) {
        let (data, theta, lambda) = instance(seed);
        let f = theta.f();
        let csr = data.csr();
        for tile in [1, 4, f] {
            for batch in [1, 8, 32] {
                let cfg = TileConfig::new(tile, batch).unwrap();
                for u in 0..data.m() {
                    let (idx, _) = csr.lane(u);
                    let got = get_hermitian(&csr, u, &theta, lambda, Regularization::Weighted, cfg, Precision::Fp32).unwrap();
                    let want = dense_gram(idx, &theta, lambda as f64 * idx.len() as f64);
                    prop_assert!(rel_frobenius(&sym_to_dense(&got), &want) <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn assembly_is_bitwise_tile_and_batch_invariant(seed in any::<u64>()) {
        let (data, theta, lambda) = instance(seed);
        let csr = data.csr();
        for u in 0..data.m() {
            let base = get_hermitian(&csr, u, &theta, lambda, Regularization::Weighted, TileConfig::new(1, 1).unwrap(), Precision::Fp32).unwrap();
            for (tile, batch) in [(3, 5), (8, 32), (32, 2), (64, 64)] {
                let other = get_hermitian(&csr, u, &theta, lambda, Regularization::Weighted, TileConfig::new(tile, batch).unwrap(), Precision::Fp32).unwrap();
                prop_assert_eq!(&other, &base);
            }
        }
    }

    #[test]
    fn weighted_gram_is_positive_definite(seed in any::<u64>()) {
        let (data, theta, _) = instance(seed);
        let lambda = 0.05f32;
        let csr = data.csr();
        for u in (0..data.m()).filter(|&u| csr.lane_len(u) > 0) {
            let a = get_hermitian(&csr, u, &theta, lambda, Regularization::Weighted, TileConfig::default(), Precision::Fp32).unwrap();
            let min = sym_to_dense(&a).symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= lambda as f64 * csr.lane_len(u) as f64 - 1e-5, "min eigenvalue {}", min);
        }
    }

    #[test]
    fn implicit_decomposition_identity(seed in any::<u64>(), alpha in 0.1f32..40.0) {
        let (data, theta, _) = instance(seed);
        let gram = precompute_gram(&theta, TileConfig::default());
        let csr = data.csr();
        let mut asm = GramAssembler::new(theta.f(), TileConfig::default(), false);
        for u in 0..data.m() {
            let (idx, vals) = csr.lane(u);
            let weights: Vec<f32> = vals.iter().map(|r| alpha * r).collect();
            let mut lower = gram.lower_f32();
            asm.accumulate(&theta, idx, Some(&weights), &mut lower);
            let got = asm.finish(lower, 0.0, Precision::Fp32).unwrap();
            let mut want = dense_gram(&(0..theta.rows() as u32).collect::<Vec<_>>(), &theta, 0.0);
            for (&v, &r) in idx.iter().zip(vals) {
                let t = row_vec(&theta, v as usize);
                want += &t * t.transpose() * (alpha as f64 * r as f64);
            }
            prop_assert!(rel_frobenius(&sym_to_dense(&got), &want) <= 1e-5);
        }
    }
}

#[test]
fn half_storage_is_exactly_half() {
    for f in [1, 7, 16, 100] {
        let a = SymMatrix::identity(f);
        assert_eq!(a.storage_bytes(), 4 * packed_len(f));
        assert_eq!(2 * a.to_half().unwrap().storage_bytes(), a.storage_bytes());
    }
}

/// Counts multiply-adds of a literal lower-triangle loop and compares with
/// the closed forms.
#[test]
fn roofline_counts_match_an_instrumented_loop() {
    let (data, theta, _) = instance(5);
    let f = theta.f();
    let csr = data.csr();
    let mut fmas = 0u64;
    for u in 0..data.m() {
        for _ in 0..csr.lane_len(u) {
            for i in 0..f {
                for _ in 0..=i {
                    fmas += 1;
                }
            }
        }
    }
    let est = roofline_estimate(data.m(), data.n(), data.nnz(), f, 6);
    assert_eq!(est.update_x.hermitian_flops, 2.0 * fmas as f64);
    let words = data.nnz() * f + data.m() * packed_len(f);
    assert_eq!(est.update_x.hermitian_bytes, 4.0 * words as f64);
    // One CG iteration: symmetric matvec (2f²), two dots and three updates (10f).
    let per_iter = 2 * f * f + 10 * f;
    assert_eq!(est.update_x.solve_flops_cg, (data.m() * 6 * per_iter) as f64);
    assert_eq!(2.0 * est.update_x.solve_bytes_cg_fp16, est.update_x.solve_bytes_cg_fp32);
}
