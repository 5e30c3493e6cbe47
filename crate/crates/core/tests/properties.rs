use proptest::prelude::*;

use mars_core::evaluation::{ndcg_at_k, rank_by_score, recall_at_k};
use mars_core::numerics::{gradient_check, Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_ops_match_finite_differences(x in matrix(3, 4), w in matrix(4, 2)) {
        let err = gradient_check(
            |t: &mut Tape, v| {
                let w = t.constant(w.clone())?;
                let h = t.matmul(v, w)?;
                let h = t.tanh(h)?;
                let s = t.softmax(h)?;
                let g = t.sigmoid(v)?;
                let g = t.ln(g)?;
                let a = t.sum(s)?;
                let b = t.mean(g)?;
                let c = t.mul(s, s)?;
                let c = t.sum(c)?;
                let ab = t.add(a, b)?;
                t.add(ab, c)
            },
            &x,
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn concat_and_slice_route_gradients(x in matrix(2, 5)) {
        let err = gradient_check(
            |t: &mut Tape, v| {
                let left = t.slice_cols(v, 0, 2)?;
                let right = t.slice_cols(v, 2, 5)?;
                let right = t.tanh(right)?;
                let joined = t.concat(&[right, left], 1)?;
                let sq = t.mul(joined, joined)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 6)) {
        let mut tape = Tape::new();
        let v = tape.constant(x).unwrap();
        let s = tape.softmax(v).unwrap();
        let out = tape.value(s);
        for r in 0..out.rows() {
            let row = out.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval(
        scores in prop::collection::vec(-1.0f64..1.0, 1..80),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..10),
        k in 1usize..100,
    ) {
        let items: Vec<usize> = (0..scores.len()).collect();
        let ranked = rank_by_score(&items, |i| scores[i]);
        let mut relevant: Vec<usize> = picks.iter().map(|p| p.index(items.len())).collect();
        relevant.sort_unstable();
        relevant.dedup();
        let recall = recall_at_k(&ranked, &relevant, k);
        let ndcg = ndcg_at_k(&ranked, &relevant, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&recall));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
        if k >= items.len() && !relevant.is_empty() {
            prop_assert!((recall - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_is_a_sorted_permutation(scores in prop::collection::vec(-3i32..3, 1..60)) {
        let items: Vec<usize> = (0..scores.len()).collect();
        let ranked = rank_by_score(&items, |i| f64::from(scores[i]));
        let mut sorted = ranked.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, items);
        for pair in ranked.windows(2) {
            let (a, b) = (scores[pair[0]], scores[pair[1]]);
            prop_assert!(a > b || (a == b && pair[0] < pair[1]));
        }
    }
}
