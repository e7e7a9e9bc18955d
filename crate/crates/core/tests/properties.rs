mod common;

use proptest::prelude::*;

use common::*;
use trackgame::protection::DiversityQueue;
use trackgame::tracking::{run_dynamic, run_static, TrackingScenario};
use trackgame::{dissimilarity, normalize, Embedding};

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn dissimilarity_symmetric_and_bounded((a, b) in (2usize..20).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))) {
        let (a, b) = (normalize(&a).unwrap(), normalize(&b).unwrap());
        let ab = dissimilarity(&a, &b).unwrap();
        let ba = dissimilarity(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=2.0).contains(&ab));
        prop_assert!(dissimilarity(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent(v in (1usize..40).prop_flat_map(vec_strategy)) {
        let once = normalize(&v).unwrap();
        let twice = normalize(once.as_slice()).unwrap();
        for (x, y) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((x - y).abs() < 1e-15);
        }
        let n: f64 = once.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn queue_is_bounded_fifo(cap in 1usize..12, pushes in 0usize..40) {
        let mut q = DiversityQueue::new(cap);
        let tag = |i: usize| Embedding::from_unit(vec![(i as f64).cos(), (i as f64).sin()]).unwrap();
        for i in 0..pushes {
            q.push(tag(i));
            prop_assert!(q.len() <= cap);
        }
        let expect: Vec<Embedding> = (pushes.saturating_sub(cap)..pushes).map(tag).collect();
        let got: Vec<Embedding> = q.iter().cloned().collect();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn tracking_invariants(seed_v in any::<u64>()) {
        let inst = random_instance(seed_v);
        let sc = TrackingScenario::default();
        let n0 = inst.gallery.len();
        let d = run_dynamic(inst.gallery.clone(), &inst.queries, inst.trackee, &sc).unwrap();
        let s = run_static(&inst.gallery, &inst.queries, inst.trackee, &sc).unwrap();
        prop_assert_eq!(check_bookkeeping(&d, inst.queries.len(), n0, true), Ok(()));
        prop_assert_eq!(check_bookkeeping(&s, inst.queries.len(), n0, false), Ok(()));
        prop_assert_eq!(&d.iterations[0].recognized_image_ids, &s.iterations[0].recognized_image_ids);
        prop_assert!(d.recognized().is_superset(&s.recognized()));
        if let (Some(td), Some(ts)) = (d.cumulative_tsr, s.cumulative_tsr) {
            prop_assert!(td >= ts);
        }
        // non-final iterations make progress
        for it in &d.iterations[..d.iterations.len() - 1] {
            prop_assert!(!it.recognized_image_ids.is_empty());
        }
    }

    #[test]
    fn query_order_does_not_matter(seed_v in any::<u64>(), rot in 0usize..25) {
        let inst = random_instance(seed_v);
        let sc = TrackingScenario::default();
        let mut perm = inst.queries.clone();
        perm.reverse();
        let k = rot % perm.len();
        perm.rotate_left(k);
        let a = run_dynamic(inst.gallery.clone(), &inst.queries, inst.trackee, &sc).unwrap();
        let b = run_dynamic(inst.gallery.clone(), &perm, inst.trackee, &sc).unwrap();
        let sets = |r: &trackgame::TrackingReport| -> Vec<Vec<u64>> {
            r.iterations.iter().map(|i| i.recognized_image_ids.clone()).collect()
        };
        prop_assert_eq!(sets(&a), sets(&b));
    }
}
