//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//! Runs sequentially in one thread so the timings mean something.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cpn::config::RunConfig;
use cpn::{driver, suite};
use cpn_core::data::ShapeMix;
use cpn_core::efd::{canonicalize, descriptor_dim, fit_descriptor, sample_contour, uniform_ts};
use cpn_core::geometry::rasterize;
use cpn_core::metrics::{f1, match_regions, Counts, Region, F1_THRESHOLDS};
use cpn_core::model::CpnConfig;
use cpn_core::nms::{nms, Scored};
use cpn_core::refine::{refine, ResidualField};
use cpn_core::{BBox, FourierDescriptor, Point, Polyline};
use oracles::polygons;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn descriptor_dims() -> Verdict {
    let got: Vec<_> = [1, 3, 8].iter().map(|&n| descriptor_dim(n)).collect();
    verdict(got == [Ok(6), Ok(14), Ok(34)], format!("{got:?}"))
}

fn circle_order_one() -> Verdict {
    let (cx, cy, r) = (12.5, -3.0, 7.25);
    let d = FourierDescriptor::circle(1, cx, cy, r).unwrap();
    let ts = uniform_ts(256);
    let worst = sample_contour(&d, &ts)
        .unwrap()
        .iter()
        .zip(&ts)
        .map(|(p, t)| {
            let w = std::f64::consts::TAU * t;
            (p.x - (cx + r * w.cos())).abs().max((p.y - (cy + r * w.sin())).abs())
        })
        .fold(0.0, f64::max);
    verdict(worst < 1e-9, format!("max deviation {worst:.2e}"))
}

fn square_fit() -> Verdict {
    let sq = polygons::square(3.0, 5.0, 10.0, 64);
    let poly = Polyline::new(sq.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap();
    let t0 = Instant::now();
    let d = fit_descriptor(&poly, 32).unwrap();
    let fit_time = t0.elapsed();
    let dist = sample_contour(&d, &uniform_ts(1024))
        .unwrap()
        .iter()
        .map(|p| oracles::distance_to_polygon(&sq, (p.x, p.y)))
        .fold(0.0, f64::max);
    let canon: Vec<(f64, f64)> = canonicalize(&poly).unwrap().points().iter().map(|p| (p.x, p.y)).collect();
    let (a, b, c, dd) = oracles::fft_descriptor(&canon, 32, 1 << 18);
    let oracle: Vec<f64> = a.iter().chain(&b).chain(&c).chain(&dd).copied().collect();
    let diff = d
        .to_flat()
        .iter()
        .zip(&oracle)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    verdict(
        sq.len() == 256 && dist < 0.1 && diff < 1e-6 && fit_time < Duration::from_secs(1),
        format!("max distance {dist:.4} px, oracle diff {diff:.2e}, fit {fit_time:.2?}"),
    )
}

fn gradcheck() -> Verdict {
    let t0 = Instant::now();
    let mut results = match suite::op_checks(0) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    match suite::model_check(&CpnConfig::default(), 0) {
        Ok(r) => results.push(r),
        Err(e) => return verdict(false, e.to_string()),
    }
    let elapsed = t0.elapsed();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let model = results.last().unwrap();
    verdict(
        failed.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, max rel error {worst:.2e}, full loss {:.2e} over {} params ({} moved off kinks), {elapsed:.1?}{}",
            results.len(),
            model.max_rel_error,
            model.checked,
            model.nudged,
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

fn refine_literal() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut compared, mut mismatches, mut worst_step) = (0, 0, 0.0f64);
    for _ in 0..40 {
        let (h, w) = (rng.random_range(4..40), rng.random_range(4..40));
        let rows: Vec<Vec<(f64, f64)>> = (0..h)
            .map(|_| (0..w).map(|_| (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))).collect())
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().flat_map(|&(a, b)| [a, b]).collect();
        let field = ResidualField::from_interleaved(h, w, &flat).unwrap();
        let sigma = rng.random_range(0.1..4.0);
        for _ in 0..50 {
            let x = rng.random_range(-3.0..w as f64 + 3.0);
            let y = rng.random_range(-3.0..h as f64 + 3.0);
            for r in [0, 1, 4] {
                let got = refine(x, y, &field, r, sigma).unwrap();
                compared += 1;
                if got != oracles::refine_literal(x, y, &rows, r, sigma) {
                    mismatches += 1;
                }
                if r > 0 {
                    // Displacement from the last rounded position.
                    let prev = oracles::refine_literal(x, y, &rows, r - 1, sigma);
                    let (rx, ry) = (oracles::rint(prev.0), oracles::rint(prev.1));
                    let step = ((got.0 - rx).abs().max((got.1 - ry).abs())) / sigma;
                    worst_step = worst_step.max(step);
                }
            }
        }
    }
    verdict(
        mismatches == 0 && worst_step <= 1.0,
        format!("{compared} refinements, {mismatches} mismatches, max step/sigma {worst_step:.6}"),
    )
}

struct Item {
    bbox: BBox,
    score: f64,
    key: usize,
}

impl Scored for Item {
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

fn nms_reference() -> Verdict {
    let mut differing = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<Item> = (0..1000)
            .map(|_| {
                let x0 = rng.random_range(0.0..100.0);
                let y0 = rng.random_range(0.0..100.0);
                let bbox =
                    BBox::new(x0, y0, x0 + rng.random_range(1.0..20.0), y0 + rng.random_range(1.0..20.0)).unwrap();
                Item {
                    bbox,
                    score: rng.random_range(0..50) as f64 / 50.0,
                    key: rng.random_range(0..30),
                }
            })
            .collect();
        let boxes: Vec<[f64; 4]> = items.iter().map(|i| i.bbox.to_array()).collect();
        let scores: Vec<f64> = items.iter().map(|i| i.score).collect();
        let keys: Vec<usize> = items.iter().map(|i| i.key).collect();
        let want = oracles::nms_reference(&boxes, &scores, &keys, 0.5);
        if nms(&items, 0.5).unwrap() != want {
            differing.push(seed);
        }
    }
    verdict(differing.is_empty(), format!("100 seeds x 1000 boxes, differing seeds {differing:?}"))
}

fn f1_thresholds() -> Verdict {
    let spot = f1(Counts { tp: 8, fp: 2, fn_: 2 });
    let mut violations = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut boxes = |n: usize| -> Vec<Region> {
            (0..n)
                .map(|_| {
                    let x0 = rng.random_range(0.0..30.0);
                    let y0 = rng.random_range(0.0..30.0);
                    let b = BBox::new(x0, y0, x0 + rng.random_range(2.0..12.0), y0 + rng.random_range(2.0..12.0));
                    Region::Box(b.unwrap())
                })
                .collect()
        };
        let (ng, np) = (seed as usize % 7, (seed as usize * 3 + 1) % 8);
        let gts = boxes(ng);
        let preds = boxes(np);
        let mut prev = f64::INFINITY;
        for tau in F1_THRESHOLDS {
            let v = f1(match_regions(&preds, &gts, tau).unwrap().counts);
            if v > prev {
                violations += 1;
            }
            prev = v;
        }
    }
    verdict(
        spot == 0.8 && F1_THRESHOLDS.len() == 9 && violations == 0,
        format!("F1(8,2,2) = {spot}, {} thresholds, {violations} increases over 50 fixtures", F1_THRESHOLDS.len()),
    )
}

fn rasterizer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut differing = 0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(4..=64), rng.random_range(4..=64));
        let n = rng.random_range(3..20);
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let v = polygons::random_polygon(&mut rng, n, cx, cy, 0.6 * h.max(w) as f64, 1.5);
        let pts: Vec<Point> = v.iter().map(|&(x, y)| Point::new(x, y)).collect();
        if rasterize(&pts, h, w).bits() != oracles::brute_force_mask(&v, h, w).as_slice() {
            differing += 1;
        }
    }
    verdict(differing == 0, format!("100 polygons, {differing} differing masks"))
}

fn training_config(refine_iterations: usize) -> RunConfig {
    let mut run = RunConfig::default();
    run.synth.images = 200;
    run.synth.shapes = ShapeMix {
        circle: 1.0,
        ellipse: 1.0,
        triangle: 0.0,
        blob: 0.0,
    };
    run.model.refine_iterations = refine_iterations;
    run
}

struct Trained {
    f1_50: f64,
    f1_85: f64,
    csv: Vec<u8>,
    elapsed: Duration,
}

fn train_and_evaluate(refine_iterations: usize) -> Result<Trained, String> {
    let run = training_config(refine_iterations);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let images = run.training_images().map_err(|e| e.to_string())?;
    let out = driver::train_run(&images, &run, dir.path()).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let report = driver::eval_model(&run, &out.params, &run.test_set().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let csv = std::fs::read(&out.history_csv).map_err(|e| e.to_string())?;
    Ok(Trained {
        f1_50: report.f1_at(0.5).unwrap(),
        f1_85: report.f1_at(0.85).unwrap(),
        csv,
        elapsed,
    })
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut report = |n: usize, v: Verdict, t: Duration| {
        all_pass &= v.pass;
        println!(
            "criterion {n}: {} {} [{t:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    };
    let fast: [(usize, fn() -> Verdict); 8] = [
        (1, descriptor_dims),
        (2, circle_order_one),
        (3, square_fit),
        (4, gradcheck),
        (5, refine_literal),
        (6, nms_reference),
        (7, f1_thresholds),
        (8, rasterizer),
    ];
    for (n, f) in fast {
        let t0 = Instant::now();
        let v = f();
        report(n, v, t0.elapsed());
    }

    let t0 = Instant::now();
    let refined = train_and_evaluate(4);
    let plain = train_and_evaluate(0);
    let v9 = match (&refined, &plain) {
        (Ok(a), Ok(b)) => verdict(
            a.f1_50 >= 0.9 && a.f1_85 >= b.f1_85 && a.elapsed < Duration::from_secs(600),
            format!(
                "held-out F1@0.5 {:.3} (r=4, trained in {:.1?}); F1@0.85 {:.3} (r=4) vs {:.3} (r=0)",
                a.f1_50, a.elapsed, a.f1_85, b.f1_85
            ),
        ),
        (Err(e), _) | (_, Err(e)) => verdict(false, e.clone()),
    };
    report(9, v9, t0.elapsed());

    let t0 = Instant::now();
    let v10 = match (&refined, train_and_evaluate(4)) {
        (Ok(a), Ok(b)) => verdict(
            a.csv == b.csv && !a.csv.is_empty(),
            format!("loss history {} bytes, identical: {}", a.csv.len(), a.csv == b.csv),
        ),
        (Err(e), _) => verdict(false, e.clone()),
        (_, Err(e)) => verdict(false, e),
    };
    report(10, v10, t0.elapsed());

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
