mod common;

use common::oracles;
use cpn_core::geometry::rasterize;
use cpn_core::metrics::{f1, f1_avg, match_iou, match_regions, Counts, Evaluation, MetricsError, Region, F1_THRESHOLDS};
use cpn_core::{BBox, Point};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn f1_spot_checks() {
    assert_eq!(f1(Counts { tp: 8, fp: 2, fn_: 2 }), 0.8);
    assert_eq!(f1(Counts::default()), 1.0);
    assert_eq!(f1(Counts { tp: 0, fp: 0, fn_: 4 }), 0.0);
    assert_eq!(f1(Counts { tp: 3, fp: 1, fn_: 0 }), 3.0 / 3.5);
}

#[test]
fn nine_thresholds_and_constant_average() {
    assert_eq!(F1_THRESHOLDS.len(), 9);
    for (k, t) in F1_THRESHOLDS.iter().enumerate() {
        assert!((t - (0.5 + 0.05 * k as f64)).abs() < 1e-12);
    }
    let c = Counts { tp: 8, fp: 2, fn_: 2 };
    assert!((f1_avg(&[c; 9]) - 0.8).abs() < 1e-15);
    assert_eq!(Evaluation::standard().thresholds, F1_THRESHOLDS.to_vec());
}

fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<Region> {
    (0..n)
        .map(|_| {
            let x0 = rng.random_range(0.0..30.0);
            let y0 = rng.random_range(0.0..30.0);
            Region::Box(BBox::new(x0, y0, x0 + rng.random_range(2.0..12.0), y0 + rng.random_range(2.0..12.0)).unwrap())
        })
        .collect()
}

#[test]
fn identical_sets_match_fully() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gts = random_boxes(&mut rng, 6);
    for t in [0.0, 0.5, 0.9, 1.0] {
        let m = match_regions(&gts, &gts, t).unwrap();
        assert_eq!(m.counts.fp + m.counts.fn_, 0, "tau {t}");
        assert!(m.counts.tp >= 1);
    }
}

#[test]
fn no_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gts = random_boxes(&mut rng, 4);
    let m = match_regions(&[], &gts, 0.5).unwrap();
    assert_eq!(m.counts, Counts { tp: 0, fp: 0, fn_: 4 });
}

#[test]
fn mixed_kinds_rejected() {
    let b = Region::Box(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap());
    let m = Region::Mask(rasterize(&[Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(0.0, 4.0)], 4, 4));
    assert_eq!(match_regions(&[b], &[m], 0.5), Err(MetricsError::MixedKinds));
}

#[test]
fn greedy_equals_exhaustive_on_separated_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        // One clear partner per row: optimal and greedy agree.
        let perm = {
            let mut p: Vec<usize> = (0..3).collect();
            for i in (1..3).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        };
        let table: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| if perm[i] == j { rng.random_range(0.6..1.0) } else { rng.random_range(0.0..0.3) })
                    .collect()
            })
            .collect();
        for tau in F1_THRESHOLDS {
            let m = match_iou(&table, 3, tau).unwrap();
            assert_eq!(m.counts.tp, oracles::best_assignment(&table, 3, tau));
        }
    }
}

#[test]
fn greedy_follows_script_on_near_ties() {
    let tables = [
        vec![vec![0.80, 0.79], vec![0.79, 0.0]],
        vec![vec![0.7, 0.7, 0.0], vec![0.7, 0.7, 0.69], vec![0.0, 0.69, 0.7]],
        vec![vec![0.55, 0.5], vec![0.5, 0.0]],
    ];
    for t in &tables {
        let n_gt = t[0].len();
        for tau in [0.0, 0.5, 0.6, 0.75] {
            assert_eq!(match_iou(t, n_gt, tau).unwrap().pairs, oracles::greedy_script(t, n_gt, tau));
        }
    }
    // Greedy is not optimal here: it takes (0,0) and strands pred 1.
    let t = &tables[0];
    assert_eq!(match_iou(t, 2, 0.5).unwrap().counts.tp, 1);
    assert_eq!(oracles::best_assignment(t, 2, 0.5), 2);
}

#[test]
fn micro_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut eval = Evaluation::standard();
    let mut sums = vec![Counts::default(); 9];
    for _ in 0..5 {
        let gts = random_boxes(&mut rng, 3);
        let preds = random_boxes(&mut rng, 4);
        eval.add(&preds, &gts).unwrap();
        for (k, t) in F1_THRESHOLDS.iter().enumerate() {
            sums[k] += match_regions(&preds, &gts, *t).unwrap().counts;
        }
    }
    assert_eq!(eval.counts, sums);
    assert_eq!(eval.f1_avg(), sums.iter().map(|c| f1(*c)).sum::<f64>() / 9.0);
}

proptest! {
    #[test]
    fn counting_identities_and_monotone_f1(seed in 0u64..10_000, np in 0usize..7, ng in 0usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts = random_boxes(&mut rng, ng);
        let preds = random_boxes(&mut rng, np);
        let mut prev = f64::INFINITY;
        for tau in F1_THRESHOLDS {
            let m = match_regions(&preds, &gts, tau).unwrap();
            prop_assert_eq!(m.counts.tp + m.counts.fn_, ng);
            prop_assert_eq!(m.counts.tp + m.counts.fp, np);
            let v = f1(m.counts);
            prop_assert!(v <= prev);
            prev = v;
        }
    }
}
