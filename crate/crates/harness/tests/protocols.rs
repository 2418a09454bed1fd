use std::collections::BTreeSet;

use hossnet_harness::splits::{make_split, split_interpolation, split_over_sample, split_over_time, InterpolationMode};
use hossnet_harness::windows::training_windows;
use hossnet_harness::{Protocol, Scenario};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("crack_{i:03}")).collect()
}

#[test]
fn paper_scale_index_sets() {
    let ids = ids(6);
    let s = split_over_sample(&ids, 300, None).unwrap();
    assert_eq!(s.train.len(), 5);
    assert!(s.train.iter().all(|p| p.steps == (0..300).collect::<Vec<_>>()));
    assert_eq!(s.test[0].sample_id, "crack_005");

    let s = split_over_time(&ids, 300, None).unwrap();
    assert_eq!(s.train_steps_of(5), (0..150).collect::<Vec<_>>());
    assert_eq!(s.test[0].steps, (150..300).collect::<Vec<_>>());

    let s = split_interpolation(&ids, 5, 300, InterpolationMode::Blocks).unwrap();
    assert_eq!(s.train[0].steps, (0..100).chain(200..300).collect::<Vec<_>>());
    assert_eq!(s.test[0].steps, (100..200).collect::<Vec<_>>());

    let s = split_interpolation(&ids, 5, 300, InterpolationMode::Sparse).unwrap();
    assert_eq!(s.train[0].steps, (0..300).step_by(10).collect::<Vec<_>>());
    assert_eq!(s.train[0].steps.len(), 30);
    assert_eq!(s.test[0].steps.len(), 270);
}

#[test]
fn desk_scale_index_sets() {
    let ids = ids(6);
    let s = split_over_time(&ids, 60, None).unwrap();
    assert_eq!(s.train_steps_of(5), (0..30).collect::<Vec<_>>());
    let s = split_interpolation(&ids, 5, 30, InterpolationMode::Blocks).unwrap();
    assert_eq!(s.test[0].steps, (10..20).collect::<Vec<_>>());
}

#[test]
fn every_protocol_is_leak_free_and_covers_the_test_sample() {
    let ids = ids(6);
    for &p in Protocol::ALL {
        for t in [12, 60, 300] {
            let s = make_split(p, &ids, t, None).unwrap();
            assert!(s.train_pairs().is_disjoint(&s.test_pairs()), "{p} T={t}");
            let held: BTreeSet<usize> = s.train_steps_of(5).into_iter().chain(s.test[0].steps.iter().copied()).collect();
            assert_eq!(held, (0..t).collect::<BTreeSet<_>>(), "{p} T={t}");
        }
    }
}

#[test]
fn training_windows_only_touch_training_pairs() {
    let ids = ids(6);
    for &p in Protocol::ALL {
        let s = make_split(p, &ids, 60, None).unwrap();
        let train = s.train_pairs();
        for sc in [Scenario::CauchyToFracture, Scenario::FractureToFracture] {
            for w in training_windows(&s, sc, 5, 5) {
                for &t in w.inputs.iter().chain(&w.targets) {
                    assert!(train.contains(&(ids[w.sample].clone(), t)), "{p} {sc}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn splits_never_leak(n in 2usize..9, t in 3usize..400, held in 0usize..9) {
        let ids = ids(n);
        let held = held % n;
        for &p in Protocol::ALL {
            let s = make_split(p, &ids, t, Some(held)).unwrap();
            prop_assert!(s.train_pairs().is_disjoint(&s.test_pairs()));
            prop_assert!(!s.test_pairs().is_empty());
            prop_assert!(s.test.iter().all(|q| q.sample == held));
        }
    }
}
