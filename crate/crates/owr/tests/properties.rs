//! Property tests for the engine's structural invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;

use owr::dataset::{ClassId, Dataset, LabeledSample};
use owr::losses::classification_loss;
use owr::memory::ExemplarMemory;
use owr::prototypes::PrototypeStore;
use owr::rejection::{
    batch_class_average, predict_deepnno, update_threshold, Prediction, RejectionWeights,
    ThresholdState,
};
use owr::rng::SplitMix64;
use owr::sampler::{sample_batch, BatchSpec};

fn finite_f64() -> impl Strategy<Value = f64> {
    (-1e3f64..1e3).prop_filter("finite", |v| v.is_finite())
}

fn label() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}"
}

proptest! {
    // score is strictly decreasing in distance, one exactly at the mean
    #[test]
    fn score_strictly_decreasing_in_distance(
        mean in prop::collection::vec(finite_f64(), 1..6),
        d1 in 0.0f64..50.0,
        d2 in 0.0f64..50.0,
    ) {
        let dim = mean.len();
        let mut store = PrototypeStore::new(dim);
        store.set_prototype(ClassId::from("k"), mean.clone(), 1).unwrap();

        let at = |d: f64| {
            let mut f = mean.clone();
            f[0] += d;
            store.probability_score(&ClassId::from("k"), &f).unwrap()
        };
        prop_assert_eq!(at(0.0), 1.0);
        if d1 < d2 {
            prop_assert!(at(d1) > at(d2));
        } else if d2 < d1 {
            prop_assert!(at(d2) > at(d1));
        }
    }

    // csv round-trip is exact
    #[test]
    fn csv_round_trip(
        rows in prop::collection::vec(
            (label(), prop::collection::vec(finite_f64(), 3)),
            1..40,
        )
    ) {
        let samples: Vec<LabeledSample> = rows
            .into_iter()
            .map(|(l, input)| LabeledSample::new(input, l.as_str()))
            .collect();
        let ds = Dataset::new(samples).unwrap();
        let back = Dataset::from_csv_str(&ds.to_csv_string()).unwrap();
        prop_assert_eq!(ds, back);
    }

    // the running mean is invariant to how the stream is partitioned
    #[test]
    fn streaming_mean_partition_invariance(
        features in prop::collection::vec(prop::collection::vec(finite_f64(), 2), 1..60),
        cut in 0usize..60,
        seed in 0u64..1000,
    ) {
        let k = ClassId::from("k");
        let cut = cut.min(features.len());
        let mut one_shot = PrototypeStore::new(2);
        one_shot.update_means(features.iter().map(|f| (&k, f.as_slice()))).unwrap();

        let mut shuffled = features.clone();
        SplitMix64::new(seed).shuffle(&mut shuffled);
        let mut two_step = PrototypeStore::new(2);
        two_step.update_means(shuffled[..cut].iter().map(|f| (&k, f.as_slice()))).unwrap();
        if cut < shuffled.len() {
            two_step.update_means(shuffled[cut..].iter().map(|f| (&k, f.as_slice()))).unwrap();
        }

        let a = one_shot.get(&k).unwrap();
        let b = two_step.get(&k).unwrap();
        prop_assert_eq!(a.count, b.count);
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    // theta stays in (0, 1] under updates fed from real score averages
    #[test]
    fn theta_stays_in_unit_interval(
        batches in prop::collection::vec(
            prop::collection::vec(0.0001f64..1.0, 1..10),
            1..50,
        )
    ) {
        let weights = RejectionWeights::default();
        let mut state = ThresholdState::new();
        for scores in &batches {
            let avg = batch_class_average(scores, state.theta, &weights).unwrap();
            update_threshold(&mut state, &[avg]);
            prop_assert!(state.theta > 0.0 && state.theta <= 1.0, "theta {}", state.theta);
        }
    }

    // the prediction rule depends on scores only through comparisons:
    // it must agree with an independent re-implementation over the raw
    // score map (hence invariant under monotone transforms of all scores
    // and the threshold together)
    #[test]
    fn prediction_matches_comparison_oracle(
        means in prop::collection::vec(prop::collection::vec(finite_f64(), 2), 1..6),
        query in prop::collection::vec(finite_f64(), 2),
        theta in 0.0f64..1.0,
    ) {
        let mut store = PrototypeStore::new(2);
        for (i, mean) in means.iter().enumerate() {
            store.set_prototype(ClassId::from(format!("k{i}")), mean.clone(), 1).unwrap();
        }
        let ts = ThresholdState { theta, step: 1 };
        let got = predict_deepnno(&store, &ts, &query).unwrap();

        // independent rule over the score map
        let scores = store.scores_all(&query).unwrap();
        let mut best: Option<(&ClassId, f64)> = None;
        for (k, &s) in &scores {
            if s > theta && best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        let want = match best {
            Some((k, _)) => Prediction::Known(k.clone()),
            None => Prediction::Unknown,
        };
        prop_assert_eq!(got, want);
    }

    // classification loss is non-negative and only (near) zero at the
    // perfect configuration
    #[test]
    fn classification_loss_non_negative(
        scores in prop::collection::vec(0.0f64..1.0, 2..6),
        truth_idx in 0usize..6,
    ) {
        let truth_idx = truth_idx % scores.len();
        let map: std::collections::BTreeMap<ClassId, f64> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (ClassId::from(format!("k{i}")), s))
            .collect();
        let truth = ClassId::from(format!("k{truth_idx}"));
        let (loss, _) = classification_loss(&map, &truth).unwrap();
        prop_assert!(loss >= 0.0);
        let imperfect = scores
            .iter()
            .enumerate()
            .any(|(i, &s)| if i == truth_idx { s < 0.99 } else { s > 0.01 });
        if imperfect {
            prop_assert!(loss > 1e-3, "loss {loss} for scores {scores:?}");
        }
    }

    // rehearsal guarantee: a positive memory share puts at least one
    // exemplar in every batch
    #[test]
    fn rehearsal_guarantee(
        batch_size in 2usize..64,
        ratio in 0.1f64..1.0,
        mem_size in 1usize..40,
        new_len in 1usize..100,
        seed in 0u64..500,
    ) {
        let spec = BatchSpec { batch_size, memory_ratio: ratio };
        prop_assume!(spec.memory_share() >= 1);
        let mut memory = ExemplarMemory::new(1000);
        let scored: Vec<(LabeledSample, f64)> = (0..mem_size)
            .map(|i| (LabeledSample::new(vec![i as f64, -1.0], "m"), i as f64))
            .collect();
        memory.admit_class(ClassId::from("m"), scored).unwrap();
        let new_data: Vec<LabeledSample> =
            (0..new_len).map(|i| LabeledSample::new(vec![i as f64, 1.0], "n")).collect();
        let batch = sample_batch(&memory, &new_data, &spec, &mut SplitMix64::new(seed)).unwrap();
        prop_assert!(batch.iter().any(|s| s.input[1] < 0.0));
        prop_assert_eq!(batch.len(), batch_size);
    }

    // memory never exceeds capacity after a prune, whatever was admitted
    #[test]
    fn prune_respects_capacity(
        capacity in 1usize..50,
        sizes in prop::collection::vec(0usize..40, 1..6),
        seed in 0u64..500,
    ) {
        let mut rng = SplitMix64::new(seed);
        let mut memory = ExemplarMemory::new(capacity);
        for (c, &n) in sizes.iter().enumerate() {
            let class = ClassId::from(format!("k{c}"));
            let scored: Vec<(LabeledSample, f64)> = (0..n)
                .map(|i| (LabeledSample::new(vec![i as f64], class.clone()), rng.next_f64()))
                .collect();
            memory.admit_class(class, scored).unwrap();
        }
        memory.prune(sizes.len());
        prop_assert!(memory.total_len() <= capacity);
    }
}

// the frozen baseline's projection and cutoff never move when classes are
// added; only the prototype set grows
#[test]
fn frozen_baseline_contract() {
    use owr::config::RunConfig;
    use owr::dataset::split_open_world;
    use owr::metrics::NullSink;
    use owr::oracle::GroundTruthOracle;
    use owr::protocol::run_nno_baseline;
    use owr::synthetic::generate_synthetic;

    let mut cfg = RunConfig::synthetic_benchmark(3);
    cfg.epochs_initial = 5;
    let s = &cfg.synthetic;
    let ds = generate_synthetic(
        s.num_classes,
        s.samples_per_class,
        s.dim,
        s.cluster_sigma,
        s.min_center_separation,
        cfg.seed,
    )
    .unwrap();
    let split = split_open_world(
        &ds,
        cfg.split.num_known_initial,
        cfg.split.num_known_total,
        cfg.split.test_fraction,
        cfg.seed,
    )
    .unwrap();
    let pool = Dataset::new(
        split
            .incremental_classes
            .iter()
            .flat_map(|c| split.train_by_class[c].iter().cloned())
            .collect(),
    )
    .unwrap();
    let mut oracle = GroundTruthOracle::new(&pool, cfg.oracle.n_query);
    let outcome = run_nno_baseline(&split, &cfg, &mut oracle, &mut NullSink).unwrap();

    // by the end of the run, all six classes have means, while the cutoff
    // reported for step 0 is still the model's cutoff
    assert_eq!(outcome.baseline.known_classes().len(), 6);
    assert_eq!(outcome.baseline.params().tau, outcome.tau);
    let known: BTreeSet<ClassId> = outcome.baseline.known_classes();
    for class in &split.incremental_classes {
        assert!(known.contains(class));
    }
}
