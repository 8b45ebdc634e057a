use std::collections::{BTreeMap, HashMap};

use cmf_core::data::write_coo;
use cmf_core::*;
use proptest::prelude::*;

fn triples_strategy() -> impl Strategy<Value = (usize, usize, Vec<RatingTriple>)> {
    (1usize..40, 1usize..40).prop_flat_map(|(m, n)| {
        let t = (0..m as u32, 0..n as u32, -5.0f32..5.0).prop_map(|(u, v, r)| RatingTriple::new(u, v, r));
        (Just(m), Just(n), prop::collection::vec(t, 0..300))
    })
}

fn key(t: &RatingTriple) -> (u32, u32, u32) {
    (t.user, t.item, t.rating.to_bits())
}

proptest! {
    #[test]
    fn csr_and_csc_hold_the_same_triples((m, n, triples) in triples_strategy()) {
        let r = SparseRatings::build(&triples, m, n).unwrap();
        let mut a: Vec<_> = r.iter_csr().map(|t| key(&t)).collect();
        let mut b: Vec<_> = r.iter_csc().map(|t| key(&t)).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn duplicates_resolve_to_last_occurrence((m, n, triples) in triples_strategy()) {
        let mut last = BTreeMap::new();
        for t in &triples {
            last.insert((t.user, t.item), t.rating.to_bits());
        }
        let r = SparseRatings::build(&triples, m, n).unwrap();
        let got: BTreeMap<_, _> = r.iter_csr().map(|t| ((t.user, t.item), t.rating.to_bits())).collect();
        prop_assert_eq!(r.nnz(), last.len());
        prop_assert_eq!(got, last);
    }

    #[test]
    fn split_partitions_the_input(
        (_, _, triples) in triples_strategy(),
        frac in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let (train, test) = split_holdout(&triples, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), triples.len());
        prop_assert_eq!(test.len(), (frac * triples.len() as f64).round() as usize);
        // Positions are disjoint: walking the input, each element is consumed
        // by exactly one side in order.
        let (mut i, mut j) = (0, 0);
        for t in &triples {
            if i < train.len() && key(&train[i]) == key(t) {
                i += 1;
            } else {
                prop_assert!(j < test.len() && key(&test[j]) == key(t));
                j += 1;
            }
        }
        prop_assert_eq!((i, j), (train.len(), test.len()));
    }

    #[test]
    fn text_round_trip_is_identity_on_canonical_data((m, n, triples) in triples_strategy()) {
        let r = SparseRatings::build(&triples, m, n).unwrap();
        let canonical = r.to_triples();
        let mut text = Vec::new();
        write_coo(&mut text, &canonical, Delimiter::Tab).unwrap();
        let opts = ParseOptions { dims: Some((m, n)), ..ParseOptions::default() };
        let coo = parse_coo(&text[..], &opts).unwrap();
        let again = SparseRatings::from_coo(&coo).unwrap();
        prop_assert_eq!(&again, &r);
        prop_assert_eq!(again.to_triples(), canonical);
    }

    #[test]
    fn cache_round_trip((m, n, triples) in triples_strategy()) {
        let r = SparseRatings::build(&triples, m, n).unwrap();
        let mut buf = Vec::new();
        r.write_cache(&mut buf).unwrap();
        prop_assert_eq!(SparseRatings::read_cache(&buf[..]).unwrap(), r);
        let cut = buf.len() / 2;
        prop_assert!(SparseRatings::read_cache(&buf[..cut]).is_err());
    }
}

#[test]
fn exhaustive_orientation_check_at_ten_thousand_entries() {
    let (triples, _) = gen_synthetic(&SynthConfig {
        m: 400,
        n: 250,
        f: 2,
        density: 0.1,
        noise_sigma: 0.0,
        seed: 9,
    })
    .unwrap();
    assert_eq!(triples.len(), 10_000);
    let r = SparseRatings::build(&triples, 400, 250).unwrap();
    let by_csc: HashMap<_, _> = r.iter_csc().map(|t| ((t.user, t.item), t.rating)).collect();
    assert_eq!(by_csc.len(), 10_000);
    for t in r.iter_csr() {
        assert_eq!(by_csc[&(t.user, t.item)], t.rating);
    }
}

#[test]
fn one_based_csv_is_shifted() {
    let text = "1,1,4.5\n# comment\n\n3,2,1\n";
    let opts = ParseOptions { delimiter: Delimiter::Comma, one_based: true, dims: None };
    let coo = parse_coo(text.as_bytes(), &opts).unwrap();
    assert_eq!((coo.m, coo.n), (3, 2));
    assert_eq!(coo.triples[1], RatingTriple::new(2, 1, 1.0));
}

#[test]
fn synthetic_noiseless_ratings_match_truth() {
    let (triples, truth) = gen_synthetic(&SynthConfig {
        m: 30,
        n: 20,
        f: 3,
        density: 0.5,
        noise_sigma: 0.0,
        seed: 1,
    })
    .unwrap();
    for t in triples {
        let p: f32 = truth.x_true.row(t.user as usize).iter().zip(truth.theta_true.row(t.item as usize)).map(|(a, b)| a * b).sum();
        assert!((p - t.rating).abs() < 1e-6);
    }
}
