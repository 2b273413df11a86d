mod common;

use common::oracles;
use cpn_core::autodiff::{grad_check_many, Graph};
use cpn_core::data::{generate, generate_one, LabeledImage, SynthConfig};
use cpn_core::efd::uniform_ts;
use cpn_core::geometry::rasterize;
use cpn_core::model::{
    batch_loss, build_targets, cell_center, extract, forward, train, Batch, CpnConfig, Parameters, ProposalGrid,
    TrainConfig, Trainer,
};
use cpn_core::refine::ResidualField;
use cpn_core::{FourierDescriptor, Point, Polyline};

fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Polyline {
    let pts = (0..n)
        .map(|k| {
            let w = std::f64::consts::TAU * k as f64 / n as f64;
            Point::new(cx + r * w.cos(), cy + r * w.sin())
        })
        .collect();
    Polyline::new(pts).unwrap()
}

fn image(h: usize, w: usize, instances: Vec<Polyline>) -> LabeledImage {
    LabeledImage::new(h, w, vec![0.8; h * w], instances).unwrap()
}

fn tuples(p: &Polyline) -> Vec<(f64, f64)> {
    p.points().iter().map(|p| (p.x, p.y)).collect()
}

fn stride_one() -> CpnConfig {
    CpnConfig {
        stride: 1,
        ..CpnConfig::default()
    }
}

#[test]
fn centered_circle_positives_equal_rasterized_pixels() {
    let poly = circle(16.0, 16.0, 8.0, 64);
    let img = image(32, 32, vec![poly.clone()]);
    let t = build_targets(&img, &stride_one()).unwrap();
    let mask = rasterize(poly.points(), 32, 32);
    assert_eq!(t.positives(), mask.count());
    for (k, &o) in t.o.iter().enumerate() {
        assert_eq!(o == 1.0, mask.bits()[k]);
    }
    assert_eq!(t.skipped, 0);
}

#[test]
fn empty_image_has_no_targets() {
    let t = build_targets(&image(16, 16, vec![]), &CpnConfig::default()).unwrap();
    assert_eq!((t.rows, t.cols), (8, 8));
    assert!(t.o.iter().all(|&o| o == 0.0));
    assert!(t.cells.is_empty());
}

#[test]
fn overlap_goes_to_nearest_centroid() {
    let a = circle(12.0, 16.0, 7.0, 64);
    let b = circle(19.0, 15.0, 6.0, 64);
    let centers = [(12.0, 16.0), (19.0, 15.0)];
    let polys = [tuples(&a), tuples(&b)];
    let cfg = stride_one();
    let t = build_targets(&image(32, 32, vec![a, b]), &cfg).unwrap();
    let mut expected = Vec::new();
    for i in 0..32 {
        for j in 0..32 {
            let (cx, cy) = (j as f64 + 0.5, i as f64 + 0.5);
            let mut best: Option<(f64, usize)> = None;
            for k in 0..2 {
                if oracles::winding_number(&polys[k], (cx, cy)) == 0 {
                    continue;
                }
                let d = (centers[k].0 - cx).powi(2) + (centers[k].1 - cy).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
            if let Some((_, k)) = best {
                expected.push((i * 32 + j, k));
            }
        }
    }
    let got: Vec<_> = t.cells.iter().map(|c| (c.cell, c.instance)).collect();
    assert_eq!(got, expected);
    assert!(expected.iter().any(|&(_, k)| k == 0) && expected.iter().any(|&(_, k)| k == 1));
}

#[test]
fn targets_are_offset_equivariant() {
    let cfg = CpnConfig::default();
    let poly = circle(11.3, 13.6, 5.0, 40);
    let base = build_targets(&image(32, 32, vec![poly.clone()]), &cfg).unwrap();
    for (dr, dc) in [(0usize, 1usize), (1, 0), (2, 3)] {
        let (dx, dy) = ((dc * cfg.stride) as f64, (dr * cfg.stride) as f64);
        let moved = build_targets(&image(32, 32, vec![poly.translated(dx, dy)]), &cfg).unwrap();
        assert_eq!(base.positives(), moved.positives());
        for (p, q) in base.cells.iter().zip(&moved.cells) {
            let (r, c) = (p.cell / base.cols, p.cell % base.cols);
            assert_eq!(q.cell, (r + dr) * base.cols + c + dc);
            assert!((q.relative_offset.0 - p.relative_offset.0).abs() < 1e-9);
            assert!((q.relative_offset.1 - p.relative_offset.1).abs() < 1e-9);
            assert!((q.descriptor.a[0] - p.descriptor.a[0] - dx).abs() < 1e-9);
            assert!((q.descriptor.c[0] - p.descriptor.c[0] - dy).abs() < 1e-9);
            let shape = |d: &FourierDescriptor| {
                let mut v = d.to_flat();
                v.remove(d.order + 1 + d.order);
                v.remove(0);
                v
            };
            for (x, y) in shape(&p.descriptor).iter().zip(shape(&q.descriptor)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

/// Grid of `rows x cols` cells, scores below threshold, zero field.
fn blank_grid(cfg: &CpnConfig, rows: usize, cols: usize) -> ProposalGrid {
    ProposalGrid {
        order: cfg.order,
        stride: cfg.stride,
        rows,
        cols,
        scores: vec![0.1; rows * cols],
        shape_coeffs: vec![0.0; rows * cols * 4 * cfg.order],
        offsets: vec![0.0; rows * cols * 2],
        residual_field: ResidualField::zeros(rows * cfg.stride, cols * cfg.stride),
    }
}

fn put_descriptor(grid: &mut ProposalGrid, cell: usize, d: &FourierDescriptor, score: f64) {
    let n = grid.order;
    let (cx, cy) = cell_center(cell / grid.cols, cell % grid.cols, grid.stride);
    grid.scores[cell] = score;
    grid.offsets[2 * cell] = d.a[0] - cx;
    grid.offsets[2 * cell + 1] = d.c[0] - cy;
    let s = &mut grid.shape_coeffs[cell * 4 * n..(cell + 1) * 4 * n];
    s[..n].copy_from_slice(&d.a[1..]);
    s[n..2 * n].copy_from_slice(&d.b);
    s[2 * n..3 * n].copy_from_slice(&d.c[1..]);
    s[3 * n..].copy_from_slice(&d.d);
}

#[test]
fn extract_below_threshold_is_empty() {
    let cfg = CpnConfig::default();
    assert!(extract(&blank_grid(&cfg, 16, 16), &cfg).unwrap().is_empty());
}

#[test]
fn extract_single_circle_is_rounded_circle() {
    let circle_d = FourierDescriptor::circle(4, 15.2, 16.7, 6.3).unwrap();
    let ts = uniform_ts(64);
    let exact = cpn_core::efd::sample_contour(&circle_d, &ts).unwrap();
    for r in [0, 1, 4] {
        let cfg = CpnConfig {
            refine_iterations: r,
            ..CpnConfig::default()
        };
        let mut grid = blank_grid(&cfg, 16, 16);
        put_descriptor(&mut grid, 8 * 16 + 7, &circle_d, 0.9);
        let dets = extract(&grid, &cfg).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].cell, 8 * 16 + 7);
        assert_eq!(dets[0].contour.len(), 64);
        for (p, q) in dets[0].contour.iter().zip(&exact) {
            if r == 0 {
                assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
            } else {
                assert_eq!((p.x, p.y), (oracles::rint(q.x), oracles::rint(q.y)));
            }
        }
    }
}

#[test]
fn extract_merges_duplicate_proposals() {
    let cfg = CpnConfig::default();
    let mut grid = blank_grid(&cfg, 16, 16);
    let d = FourierDescriptor::circle(4, 12.0, 12.0, 5.0).unwrap();
    put_descriptor(&mut grid, 6 * 16 + 6, &d, 0.8);
    put_descriptor(&mut grid, 5 * 16 + 6, &d.translated(0.5, -0.4), 0.95);
    let far = FourierDescriptor::circle(4, 25.0, 25.0, 4.0).unwrap();
    put_descriptor(&mut grid, 12 * 16 + 12, &far, 0.7);
    let dets = extract(&grid, &cfg).unwrap();
    assert_eq!(dets.iter().map(|d| d.cell).collect::<Vec<_>>(), vec![5 * 16 + 6, 12 * 16 + 12]);
}

#[test]
fn detections_never_exceed_grid_cells() {
    let cfg = CpnConfig::default();
    let params = Parameters::init(&cfg).unwrap();
    let img = generate_one(&SynthConfig::default(), 3).unwrap();
    let grid = forward(&cfg, &params, &img.pixels, 32, 32).unwrap();
    let lenient = CpnConfig {
        score_threshold: 1e-9,
        nms_threshold: 0.999_999,
        ..cfg
    };
    assert!(extract(&grid, &lenient).unwrap().len() <= grid.rows * grid.cols);
}

#[test]
fn forward_shapes_at_32() {
    let cfg = CpnConfig::default();
    let params = Parameters::init(&cfg).unwrap();
    let img = generate_one(&SynthConfig::default(), 0).unwrap();
    let a = forward(&cfg, &params, &img.pixels, 32, 32).unwrap();
    assert_eq!((a.rows, a.cols), (16, 16));
    assert_eq!(a.scores.len(), 256);
    assert_eq!(a.shape_coeffs.len(), 256 * 16);
    assert_eq!(a.offsets.len(), 256 * 2);
    assert_eq!(a.residual_field.planar().len(), 32 * 32 * 2);
    assert!(a.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    assert_eq!(a, forward(&cfg, &params, &img.pixels, 32, 32).unwrap());
}

#[test]
fn full_loss_gradient_on_small_net() {
    let cfg = CpnConfig {
        order: 2,
        samples: 16,
        widths: vec![4, 6],
        weights: cpn_core::loss::LossWeights::default_for_order(2),
        refine_iterations: 2,
        ..CpnConfig::default()
    };
    let synth = SynthConfig {
        height: 16,
        width: 16,
        objects: [1, 2],
        radius: [3.0, 5.0],
        ..SynthConfig::default()
    };
    let img = generate_one(&synth, 0).unwrap();
    let targets = build_targets(&img, &cfg).unwrap();
    assert!(targets.positives() > 0);
    let batch = Batch::new(&cfg, &[(&img, &targets)]).unwrap();
    let params = Parameters::init(&cfg).unwrap();
    let ts = uniform_ts(cfg.samples);
    let xs: Vec<_> = params.tensors().cloned().collect();
    let report = grad_check_many(
        |g: &mut Graph, vars| {
            batch_loss(g, &cfg, &params, vars, &batch, &ts)
                .map(|l| l.total)
                .map_err(|e| cpn_core::autodiff::AutodiffError::Invalid(e.to_string()))
        },
        &xs,
        1e-5,
    )
    .unwrap();
    assert_eq!(report.checked, params.count());
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn short_training_lowers_loss_deterministically() {
    let synth = SynthConfig {
        images: 12,
        ..SynthConfig::default()
    };
    let images = generate(&synth).unwrap();
    let cfg = CpnConfig::default();
    let tcfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let mut seen = 0;
    let (params, history) = train(&images, &cfg, &tcfg, |s, _| {
        seen += 1;
        assert_eq!(s.epoch, seen);
    })
    .unwrap();
    assert_eq!(history.len(), 4);
    assert_eq!(history[0].steps, 3);
    assert!(history[3].loss.total < history[0].loss.total);
    let (again, history2) = train(&images, &cfg, &tcfg, |_, _| {}).unwrap();
    assert_eq!(params, again);
    assert_eq!(history, history2);
}

#[test]
fn trainer_rejects_bad_input() {
    let cfg = CpnConfig::default();
    let tcfg = TrainConfig::default();
    assert!(Trainer::new(&cfg, &tcfg, Parameters::init(&cfg).unwrap(), &[]).is_err());
    let odd = LabeledImage::new(18, 18, vec![0.5; 324], vec![]).unwrap();
    assert!(Trainer::new(&cfg, &tcfg, Parameters::init(&cfg).unwrap(), &[odd]).is_err());
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(train(&generate(&SynthConfig { images: 2, ..SynthConfig::default() }).unwrap(), &cfg, &bad, |_, _| {}).is_err());
}
