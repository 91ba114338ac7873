//! Property-based invariants over randomized inputs: encoder packing is an
//! exact bijection onto the digit lattice, the rational L1 metric behaves
//! like a metric, piece bounds are monotone, and serialization round-trips
//! bit-for-bit.

use deepnarrow::encoder::{decode_oracle, encode, TruncationFrontEnd};
use deepnarrow::json::{from_json_str, to_json_string};
use deepnarrow::pl::{rat, PiecewiseLinear, Rat};
use deepnarrow::separation::{relu_piece_bound, seeded_candidates};
use num_traits::Zero;
use proptest::prelude::*;

/// A small front end whose digit budget is always feasible.
fn front_end_strategy() -> impl Strategy<Value = TruncationFrontEnd> {
    (prop_oneof![Just(2u32), Just(10)], 1u32..=3, 1usize..=4)
        .prop_map(|(base, kappa, n)| TruncationFrontEnd::unit(base, kappa, n))
}

/// A valid piecewise-linear function on [0, 1] with small rational values.
fn pl_strategy() -> impl Strategy<Value = PiecewiseLinear> {
    proptest::collection::vec((-20i64..=20, 1i64..=8), 2..=6).prop_map(|vals| {
        let k = vals.len();
        let xs: Vec<Rat> = (0..k).map(|i| rat(i as i64, (k - 1) as i64)).collect();
        let ys: Vec<Rat> = vals.into_iter().map(|(n, d)| rat(n, d)).collect();
        PiecewiseLinear::new(xs, ys).expect("strictly increasing breakpoints")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn packing_and_decoding_agree_with_direct_truncation(
        fe in front_end_strategy(),
        raw in proptest::collection::vec(0.0f64..1.0, 4),
    ) {
        let x: Vec<f64> = raw[..fe.n]
            .iter()
            .map(|v| v.clamp(1e-12, 1.0 - 1e-12))
            .collect();
        let enc = encode(&x, &fe).unwrap();
        let digits = fe.apply(&x).unwrap();
        let m = fe.block_modulus() as f64;
        for j in 1..=fe.n {
            prop_assert_eq!(decode_oracle(&enc, j).unwrap(), digits[j - 1] / m);
        }
        // the packed value itself is the exact base-m expansion
        let total = fe.grid_size() as f64;
        prop_assert_eq!(enc.r, enc.r_exact as f64 / total);
    }

    #[test]
    fn l1_distance_is_a_metric_on_samples(
        a in pl_strategy(),
        b in pl_strategy(),
    ) {
        let ab = a.l1_distance(&b).unwrap();
        let ba = b.l1_distance(&a).unwrap();
        prop_assert_eq!(ab.clone(), ba);
        prop_assert!(ab >= Rat::zero());
        prop_assert!(a.l1_distance(&a).unwrap().is_zero());
    }

    #[test]
    fn relu_piece_bound_is_monotone(
        depth in 1u32..=4,
        nodes in 1u32..=10,
    ) {
        prop_assert!(relu_piece_bound(depth, nodes) <= relu_piece_bound(depth + 1, nodes));
        prop_assert!(relu_piece_bound(depth, nodes) <= relu_piece_bound(depth, nodes + 1));
        prop_assert!(relu_piece_bound(depth, nodes) >= 1);
    }

    #[test]
    fn network_json_round_trips_bit_for_bit(seed in 0u64..1000) {
        for net in seeded_candidates(2, 2, 4, seed) {
            let text = to_json_string(&net).unwrap();
            let back = from_json_str(&text).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(to_json_string(&back).unwrap(), text);
        }
    }
}
