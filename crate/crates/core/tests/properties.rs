use std::collections::BTreeSet;

use proptest::prelude::*;

use mdpval::analysis::{
    decide_verdict, percentile, significance, Level, Outcome, PercentileConvention, StatKind,
    StatPopulation,
};
use mdpval::dataset::{batches, collect, shuffle_actions_within_batch, BatchPolicy, Dataset, RemainderPolicy};
use mdpval::env::{make_env, EnvSpec};
use mdpval::mdn::{forward, init, ModelConfig, SIGMA_MAX, SIGMA_MIN};

fn population(values: Vec<Vec<f64>>, kind: StatKind) -> StatPopulation {
    let n = values[0].len();
    StatPopulation {
        kind,
        num_models: 1,
        num_batches: n,
        values,
    }
}

fn small_dataset(env: u8, seed: u64, batches: usize) -> Dataset {
    let mut e = make_env(EnvSpec::new(env, 4, 5, seed)).unwrap();
    collect(&mut e, batches, 10, seed + 1, RemainderPolicy::Strict).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_on_simplex_and_in_sigma_bounds(
        seed in any::<u64>(),
        scale in 0.0f64..200.0,
        state in prop::collection::vec(-1.0f64..1.0, 10),
        action in 0u8..2,
    ) {
        let p = init::<f64>(&ModelConfig { seed, ..ModelConfig::default() }).unwrap();
        let s: Vec<f64> = state.iter().map(|v| v * scale).collect();
        let out = forward(&p, &s, action, None).unwrap();
        let total: f64 = out.alpha.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
        prop_assert!(out.alpha.iter().all(|a| *a >= 0.0));
        prop_assert!(out.sigma.iter().all(|s| (SIGMA_MIN..=SIGMA_MAX).contains(s)));
    }

    #[test]
    fn action_shuffle_keeps_the_multiset(env in 1u8..=7, seed in any::<u64>(), shuffle in any::<u64>()) {
        let ds = small_dataset(env, seed, 2);
        for b in batches(&ds, 10, None, BatchPolicy::DropRemainder).unwrap() {
            let s = shuffle_actions_within_batch(&b, shuffle);
            let mut x = b.actions.clone();
            let mut y = s.actions.clone();
            x.sort();
            y.sort();
            prop_assert_eq!(x, y);
            prop_assert_eq!(&s.states, &b.states);
            prop_assert_eq!(&s.rewards, &b.rewards);
            prop_assert_eq!(&s.next_states, &b.next_states);
        }
    }

    #[test]
    fn batches_cover_every_transition_once(seed in any::<u64>(), bs in 1usize..=30, shuffle in any::<Option<u64>>()) {
        let ds = small_dataset(1, seed, 3);
        let out = batches(&ds, bs, shuffle, BatchPolicy::DropRemainder).unwrap();
        let seen: Vec<(f64, f64)> = out
            .iter()
            .flat_map(|b| b.rewards.iter().zip(&b.states).map(|(r, s)| (*r, *s)).collect::<Vec<_>>())
            .collect();
        prop_assert_eq!(out.len(), ds.transitions.len() / bs);
        prop_assert_eq!(seen.len(), (ds.transitions.len() / bs) * bs);
        prop_assert!(out.iter().all(|b| b.len() == bs));
    }

    #[test]
    fn dataset_round_trips(env in 1u8..=7, seed in any::<u64>()) {
        let ds = small_dataset(env, seed, 2);
        let dir = tempfile::tempdir().unwrap();
        for name in ["d.jsonl", "d.jsonl.gz"] {
            let path = dir.path().join(name);
            ds.save(&path).unwrap();
            prop_assert_eq!(&Dataset::load(&path).unwrap(), &ds);
        }
    }

    #[test]
    fn raising_x_never_adds_significance(
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
        x1 in 1.0f64..99.0,
        x2 in 1.0f64..99.0,
    ) {
        let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        let p = population(vec![values], StatKind::OffsetActionSensitivity);
        let at = |x| significance(&p, &Level::Global(x), PercentileConvention::LowerEdge).unwrap().features[0].significant;
        prop_assert!(!at(hi) || at(lo));
    }

    #[test]
    fn sample_order_does_not_change_percentiles(
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
        q in 0.0f64..=100.0,
        rot in 0usize..40,
    ) {
        let mut rotated = values.clone();
        let k = rot % values.len();
        rotated.rotate_left(k);
        prop_assert_eq!(percentile(&values, q), percentile(&rotated, q));
    }

    #[test]
    fn verdict_follows_the_intersection(
        reward in prop::collection::btree_set(0usize..6, 0..6),
        action in prop::collection::btree_set(0usize..6, 0..6),
    ) {
        let report = |set: &BTreeSet<usize>| {
            let vals = (0..6).map(|i| vec![if set.contains(&i) { 1.0 } else { -1.0 }]).collect();
            significance(&population(vals, StatKind::RewardContribution), &Level::Global(75.0), PercentileConvention::LowerEdge).unwrap()
        };
        let v = decide_verdict(&report(&reward), &report(&action));
        let inter: BTreeSet<usize> = reward.intersection(&action).copied().collect();
        prop_assert_eq!(&v.reward_features, &reward);
        let expected = if reward.is_empty() {
            Outcome::NoRewardSignal
        } else if inter.is_empty() {
            Outcome::NoActionControl
        } else {
            Outcome::PotentiallySuitable
        };
        prop_assert_eq!(v.outcome, expected);
        if v.outcome == Outcome::PotentiallySuitable {
            prop_assert!(v.actionable_features.is_subset(&v.reward_features));
            prop_assert_eq!(&v.actionable_features, &inter);
        }
    }
}
