mod common;

use common::oracles;
use cpn_core::nms::{nms, priority_order, NmsError};
use cpn_core::BBox;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Item {
    bbox: BBox,
    score: f64,
    key: usize,
}

impl cpn_core::nms::Scored for Item {
    fn score(&self) -> f64 {
        self.score
    }
    fn bbox(&self) -> BBox {
        self.bbox
    }
    fn tie_key(&self) -> usize {
        self.key
    }
}

fn random_items(rng: &mut ChaCha8Rng, n: usize) -> Vec<Item> {
    (0..n)
        .map(|_| {
            let x0 = rng.random_range(0.0..100.0);
            let y0 = rng.random_range(0.0..100.0);
            let bbox = BBox::new(x0, y0, x0 + rng.random_range(1.0..20.0), y0 + rng.random_range(1.0..20.0)).unwrap();
            // Coarse scores so ties happen.
            let score = rng.random_range(0..50) as f64 / 50.0;
            Item { bbox, score, key: rng.random_range(0..30) }
        })
        .collect()
}

fn reference(items: &[Item], thr: f64) -> Vec<usize> {
    let boxes: Vec<[f64; 4]> = items.iter().map(|i| i.bbox.to_array()).collect();
    let scores: Vec<f64> = items.iter().map(|i| i.score).collect();
    let keys: Vec<usize> = items.iter().map(|i| i.key).collect();
    oracles::nms_reference(&boxes, &scores, &keys, thr)
}

#[test]
fn equals_quadratic_reference() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = random_items(&mut rng, 1000);
        let thr = rng.random_range(0.05..0.95);
        assert_eq!(nms(&items, thr).unwrap(), reference(&items, thr), "seed {seed}");
    }
}

#[test]
fn identical_boxes_keep_best() {
    let b = BBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
    let items = vec![
        Item { bbox: b, score: 0.4, key: 0 },
        Item { bbox: b, score: 0.9, key: 1 },
        Item { bbox: b, score: 0.9, key: 0 },
    ];
    assert_eq!(nms(&items, 0.5).unwrap(), vec![2]);
    assert_eq!(priority_order(&items), vec![2, 1, 0]);
}

#[test]
fn threshold_is_strict() {
    // IoU exactly 1/3: kept at threshold 1/3, suppressed just below.
    let a = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let b = BBox::new(0.5, 0.0, 1.5, 1.0).unwrap();
    let items = vec![(a, 0.9), (b, 0.8)];
    assert_eq!(nms(&items, 1.0 / 3.0).unwrap(), vec![0, 1]);
    assert_eq!(nms(&items, 0.33).unwrap(), vec![0]);
}

#[test]
fn errors() {
    let a = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    assert_eq!(nms(&[(a, 0.5)], 0.0), Err(NmsError::Threshold(0.0)));
    assert_eq!(nms(&[(a, 0.5)], 1.5), Err(NmsError::Threshold(1.5)));
    assert_eq!(nms(&[(a, 0.5), (a, f64::NAN)], 0.5), Err(NmsError::Score(1)));
    assert_eq!(nms::<(BBox, f64)>(&[], 0.5).unwrap(), Vec::<usize>::new());
}

proptest! {
    #[test]
    fn kept_boxes_do_not_overlap_beyond_threshold(seed in 0u64..10_000, thr in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = random_items(&mut rng, 60);
        let keep = nms(&items, thr).unwrap();
        for (k, &i) in keep.iter().enumerate() {
            for &j in &keep[k + 1..] {
                prop_assert!(cpn_core::geometry::iou_box(&items[i].bbox, &items[j].bbox) <= thr);
            }
        }
        // Every dropped item overlaps some kept item that outranks it.
        let order = priority_order(&items);
        let rank: Vec<usize> = {
            let mut r = vec![0; items.len()];
            for (pos, &i) in order.iter().enumerate() { r[i] = pos; }
            r
        };
        for i in 0..items.len() {
            if !keep.contains(&i) {
                prop_assert!(keep.iter().any(|&k| rank[k] < rank[i]
                    && cpn_core::geometry::iou_box(&items[k].bbox, &items[i].bbox) > thr));
            }
        }
        // The top-scoring item always survives.
        if !items.is_empty() {
            prop_assert_eq!(keep[0], order[0]);
        }
    }
}
