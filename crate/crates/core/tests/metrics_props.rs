use fewlabel::metrics::{fid, inception_score, GaussianStats};
use proptest::prelude::*;

fn stats(features: &[f64], dim: usize) -> GaussianStats {
    GaussianStats::from_features(features, dim).unwrap()
}

fn samples(n: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fid_is_a_symmetric_nonnegative_shift_invariant_distance(
        a in samples(40, 4),
        b in samples(40, 4),
        shift in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let (sa, sb) = (stats(&a, 4), stats(&b, 4));
        let ab = fid(&sa, &sb).unwrap();
        let ba = fid(&sb, &sa).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
        prop_assert!(fid(&sa, &sa).unwrap().abs() <= 1e-8);
        let moved = |x: &[f64]| x.iter().enumerate().map(|(i, v)| v + shift[i % 4]).collect::<Vec<_>>();
        let shifted = fid(&stats(&moved(&a), 4), &stats(&moved(&b), 4)).unwrap();
        prop_assert!((shifted - ab).abs() <= 1e-7 * ab.max(1.0), "{} vs {}", shifted, ab);
    }

    #[test]
    fn inception_score_lies_between_one_and_the_class_count(
        logits in prop::collection::vec(-4.0f64..4.0, 30 * 5),
    ) {
        let k = 5;
        let probs: Vec<f64> = logits
            .chunks(k)
            .flat_map(|row| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                row.iter().map(move |v| v.exp() / z)
            })
            .collect();
        let s = inception_score(&probs, k).unwrap();
        prop_assert!(s >= 1.0 - 1e-9 && s <= k as f64 + 1e-9, "{}", s);
    }
}
