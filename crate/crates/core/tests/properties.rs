//! Invariants of the public API over random inputs.

use proptest::prelude::*;
use redcmp::corpus::{
    build_corpus, decode_argmax, make_windows, window_count, Class, SetId, Subset,
};
use redcmp::eval::{auc, calibrate_threshold, classify};
use redcmp::numerics::Vector;
use redcmp::{Corpus, RedModel, Rng, Variant};

fn set_id() -> impl Strategy<Value = SetId> {
    prop_oneof![Just(SetId::A), Just(SetId::B), Just(SetId::C)]
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::A), Just(Variant::B), Just(Variant::C)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn output_rows_are_distributions(
        seed in any::<u64>(),
        k in 2usize..8,
        h in 1usize..6,
        l in 1usize..6,
        v in variant(),
    ) {
        let mut rng = Rng::new(seed);
        let model = RedModel::init(k, h, l, v, &mut rng);
        let xs: Vec<Vector<f64>> = (0..l)
            .map(|_| (0..k).map(|_| rng.gaussian()).collect())
            .collect();
        let trace = model.forward(&xs).unwrap();
        prop_assert_eq!(trace.probs.len(), l);
        for p in &trace.probs {
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&q| q > 0.0));
        }
    }

    #[test]
    fn variants_share_parameter_count(k in 1usize..20, h in 1usize..70, l in 1usize..10) {
        let mut rng = Rng::new(1);
        let counts: Vec<usize> = Variant::ALL
            .iter()
            .map(|&v| RedModel::init(k, h, l, v, &mut rng).param_count())
            .collect();
        prop_assert_eq!(counts[0], counts[1]);
        prop_assert_eq!(counts[1], counts[2]);
        prop_assert_eq!(counts[0], 8 * h * (k + h + 1) + k * (h + 1));
    }

    #[test]
    fn windows_cover_shifted_stream(
        set in set_id(),
        seed in any::<u64>(),
        l in 1usize..16,
        stride in 1usize..16,
        v in variant(),
    ) {
        let corpus: Corpus = build_corpus(set, Subset::Abnormal, 120, seed).unwrap();
        let offset = v.target_offset(l);
        let pairs = make_windows(&corpus, l, stride, offset);
        prop_assert_eq!(pairs.len(), window_count(120, l, stride, offset));
        for (n, p) in pairs.iter().enumerate() {
            prop_assert_eq!(p.start, n * stride);
            prop_assert_eq!(&p.x[..], &corpus.vectors[p.start..p.start + l]);
            for (t, y) in p.y.iter().enumerate() {
                prop_assert_eq!(y.argmax(), corpus.stream.symbols[p.start + offset + t]);
            }
        }
    }

    #[test]
    fn noisy_subsets_keep_their_symbols(set in set_id(), seed in any::<u64>()) {
        let clear: Corpus = build_corpus(set, Subset::Clear, 90, seed).unwrap();
        let noise: Corpus = build_corpus(set, Subset::Noise, 90, seed).unwrap();
        let abnormal: Corpus = build_corpus(set, Subset::Abnormal, 90, seed).unwrap();
        let abnoise: Corpus = build_corpus(set, Subset::Abnoise, 90, seed).unwrap();
        prop_assert_eq!(&noise.stream.symbols, &clear.stream.symbols);
        prop_assert_eq!(&abnoise.stream.symbols, &abnormal.stream.symbols);
        for c in [&noise, &abnoise] {
            for (v, &s) in c.vectors.iter().zip(&c.stream.symbols) {
                prop_assert_eq!(decode_argmax(v), s);
            }
        }
    }

    #[test]
    fn auc_is_a_probability_and_flips_with_sign(
        scored in proptest::collection::vec((-1e3f64..1e3, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let labels: Vec<Class> = scored
            .iter()
            .map(|s| if s.1 { Class::Abnormal } else { Class::Normal })
            .collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        match (auc(&scores, &labels), auc(&negated, &labels)) {
            (Some(a), Some(b)) => {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
            (None, None) => prop_assert!(labels.iter().all(|&l| l == labels[0])),
            _ => prop_assert!(false, "auc defined for only one sign"),
        }
    }

    #[test]
    fn full_percentile_never_flags_training_windows(
        scores in proptest::collection::vec(0.0f64..50.0, 1..80),
    ) {
        let threshold = calibrate_threshold(&scores, 100.0).unwrap();
        let labels = vec![Class::Normal; scores.len()];
        let report = classify(&scores, threshold, &labels).unwrap();
        prop_assert_eq!(report.false_pos, 0);
        prop_assert_eq!(report.true_neg, scores.len());
    }
}
