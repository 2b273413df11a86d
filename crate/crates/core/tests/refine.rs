mod common;

use common::oracles;
use cpn_core::refine::{refine, refine_contour, refine_traced, ResidualField, RefineError};
use cpn_core::Point;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (ResidualField, Vec<Vec<(f64, f64)>>) {
    let rows: Vec<Vec<(f64, f64)>> = (0..h)
        .map(|_| (0..w).map(|_| (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))).collect())
        .collect();
    let interleaved: Vec<f64> = rows.iter().flatten().flat_map(|&(a, b)| [a, b]).collect();
    (ResidualField::from_interleaved(h, w, &interleaved).unwrap(), rows)
}

#[test]
fn matches_literal_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (h, w) = (rng.random_range(4..40), rng.random_range(4..40));
        let (field, rows) = random_field(&mut rng, h, w);
        let sigma = rng.random_range(0.1..5.0);
        for _ in 0..40 {
            // Include points outside the field and exact half-integers.
            let mut x = rng.random_range(-5.0..w as f64 + 5.0);
            let mut y = rng.random_range(-5.0..h as f64 + 5.0);
            if rng.random_bool(0.2) {
                x = (x * 2.0).round() / 2.0;
                y = (y * 2.0).round() / 2.0;
            }
            for r in [0, 1, 2, 4, 7] {
                let got = refine(x, y, &field, r, sigma).unwrap();
                let want = oracles::refine_literal(x, y, &rows, r, sigma);
                assert_eq!(got, want, "x={x} y={y} r={r}");
            }
        }
    }
}

#[test]
fn rint_ties_to_even() {
    for (v, want) in [(0.5, 0.0), (1.5, 2.0), (2.5, 2.0), (-0.5, -0.0), (-1.5, -2.0), (3.49, 3.0), (3.51, 4.0)] {
        assert_eq!(oracles::rint(v), want);
        assert_eq!(cpn_core::math::round_half_even(v), want);
    }
}

#[test]
fn contour_refines_every_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (field, rows) = random_field(&mut rng, 16, 16);
    let pts: Vec<Point> = (0..30).map(|_| Point::new(rng.random_range(0.0..16.0), rng.random_range(0.0..16.0))).collect();
    let out = refine_contour(&pts, &field, 3, 1.5).unwrap();
    for (p, q) in pts.iter().zip(&out) {
        assert_eq!((q.x, q.y), oracles::refine_literal(p.x, p.y, &rows, 3, 1.5));
    }
}

#[test]
fn rejects_bad_inputs() {
    let f = ResidualField::zeros(4, 4);
    assert_eq!(refine(1.0, 1.0, &f, 1, 0.0), Err(RefineError::Margin(0.0)));
    assert!(refine(1.0, 1.0, &f, 1, f64::NAN).is_err());
    assert!(ResidualField::from_planar(4, 4, vec![0.0; 31]).is_err());
    assert_eq!(ResidualField::from_planar(2, 2, vec![f64::NAN; 8]), Err(RefineError::NonFinite));
}

proptest! {
    #[test]
    fn each_step_stays_within_margin(seed in 0u64..5000, x in -3.0f64..35.0, y in -3.0f64..35.0, sigma in 0.05f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (field, _) = random_field(&mut rng, 32, 32);
        let (mut px, mut py) = (x, y);
        for _ in 0..6 {
            let (rx, ry) = (oracles::rint(px), oracles::rint(py));
            let (nx, ny) = refine(px, py, &field, 1, sigma).unwrap();
            prop_assert!((nx - rx).abs() <= sigma && (ny - ry).abs() <= sigma);
            // Rounding moves at most half a pixel more.
            prop_assert!((nx - px).abs() <= sigma + 0.5 && (ny - py).abs() <= sigma + 0.5);
            px = nx;
            py = ny;
        }
        let t = refine_traced(x, y, &field, 6, sigma);
        prop_assert_eq!((t.x, t.y), (px, py));
    }

    #[test]
    fn zero_iterations_is_identity(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let f = ResidualField::zeros(4, 4);
        prop_assert_eq!(refine(x, y, &f, 0, 1.0).unwrap(), (x, y));
    }
}
