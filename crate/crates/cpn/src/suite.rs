//! Finite-difference gradient suite: every graph op, the loss terms and the
//! full training loss through the network.

use std::time::Instant;

use cpn_core::autodiff::{grad_check_many, AutodiffError, GradCheckReport, Graph, Result, Tensor, Var};
use cpn_core::data::{generate_one, SynthConfig};
use cpn_core::efd::uniform_ts;
use cpn_core::loss::{contour_loss, repr_loss, LossError};
use cpn_core::model::{batch_loss, build_targets, Batch, CpnConfig, ModelError, Parameters};
use cpn_core::FourierDescriptor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub nudged: usize,
    pub unresolved: usize,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE && self.max_rel_error.is_finite()
    }
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `sum(w * y)` with fixed random weights `w`.
fn contract(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tensor(&mut rng, g.value(y).shape(), -1.0, 1.0);
    let w = g.input(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn loss_err(e: LossError) -> AutodiffError {
    match e {
        LossError::Autodiff(e) => e,
        other => AutodiffError::Invalid(other.to_string()),
    }
}

fn model_err(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(e) => e,
        other => AutodiffError::Invalid(other.to_string()),
    }
}

fn timed(name: &str, run: impl FnOnce() -> Result<GradCheckReport>) -> Result<CheckResult> {
    let t0 = Instant::now();
    let r = run()?;
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        checked: r.checked,
        nudged: r.nudged,
        unresolved: r.unresolved,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

type Case = (&'static str, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>, Vec<Tensor>);

fn op_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let a = tensor(r, &[3, 4], -1.0, 1.0);
    let b = tensor(r, &[3, 4], -1.0, 1.0);
    let img = tensor(r, &[2, 3, 6, 6], -1.0, 1.0);
    let k3 = tensor(r, &[4, 3, 3, 3], -1.0, 1.0);
    let k1 = tensor(r, &[2, 3, 1, 1], -1.0, 1.0);
    let bias = tensor(r, &[3], -1.0, 1.0);
    let other = tensor(r, &[2, 2, 6, 6], -1.0, 1.0);
    let gamma = tensor(r, &[3], 0.5, 1.5);
    let logits = tensor(r, &[1, 1, 4, 4], -4.0, 4.0);
    let o: Vec<f64> = (0..16).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
    let fmap = tensor(r, &[2, 8, 3, 3], -1.0, 1.0);
    let loc = tensor(r, &[2, 2, 3, 3], -1.0, 1.0);
    let index = vec![[0, 1, 2], [1, 0, 0], [1, 2, 1]];
    let desc = tensor(r, &[3, 10], -3.0, 3.0);
    let lin_x = tensor(r, &[4, 5], -1.0, 1.0);
    let lin_w = tensor(r, &[3, 5], -1.0, 1.0);
    let lin_b = tensor(r, &[3], -1.0, 1.0);
    let field = tensor(r, &[2, 2, 8, 8], -1.5, 1.5);
    let coords: Vec<f64> = (0..2 * 5 * 2)
        .map(|_| r.random_range(0..8) as f64 + r.random_range(-0.3..0.3))
        .collect();
    let coords = Tensor::new([2, 5, 2], coords).unwrap();
    let ts = uniform_ts(12);
    let targets: Vec<FourierDescriptor> = (0..3)
        .map(|_| FourierDescriptor::from_flat(2, tensor(r, &[10], -3.0, 3.0).data()).unwrap())
        .collect();

    macro_rules! unary {
        ($name:literal, $op:ident, $x:expr) => {
            (
                $name,
                Box::new(|g: &mut Graph, v: &[Var]| {
                    let y = g.$op(v[0])?;
                    contract(g, y, 1)
                }) as Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
                vec![$x.clone()],
            )
        };
    }
    macro_rules! binary {
        ($name:literal, $op:ident) => {
            (
                $name,
                Box::new(|g: &mut Graph, v: &[Var]| {
                    let y = g.$op(v[0], v[1])?;
                    contract(g, y, 2)
                }) as Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
                vec![a.clone(), b.clone()],
            )
        };
    }

    let ts_c = ts.clone();
    let t_c = targets.clone();
    let t_r = targets;
    let (idx_g, idx_p) = (index.clone(), index);
    let coords_f = coords.clone();
    vec![
        binary!("add", add),
        binary!("sub", sub),
        binary!("mul", mul),
        ("scale", Box::new(|g, v| { let y = g.scale(v[0], -1.7)?; contract(g, y, 3) }), vec![a.clone()]),
        unary!("abs", abs, a),
        unary!("relu", relu, a),
        unary!("sigmoid", sigmoid, a),
        unary!("tanh", tanh, a),
        ("sum", Box::new(|g, v| g.sum(v[0])), vec![a.clone()]),
        ("mean", Box::new(|g, v| g.mean(v[0])), vec![a.clone()]),
        (
            "linear",
            Box::new(|g, v| { let y = g.linear(v[0], v[1], Some(v[2]))?; contract(g, y, 4) }),
            vec![lin_x, lin_w, lin_b],
        ),
        (
            "conv2d 3x3 pad 1",
            Box::new(|g, v| { let y = g.conv2d(v[0], v[1], 1, 1)?; contract(g, y, 5) }),
            vec![img.clone(), k3.clone()],
        ),
        (
            "conv2d 3x3 stride 2",
            Box::new(|g, v| { let y = g.conv2d(v[0], v[1], 2, 0)?; contract(g, y, 5) }),
            vec![img.clone(), k3.clone()],
        ),
        (
            "conv2d 1x1",
            Box::new(|g, v| { let y = g.conv2d(v[0], v[1], 1, 0)?; contract(g, y, 5) }),
            vec![img.clone(), k1],
        ),
        (
            "conv2d + relu + sum",
            Box::new(|g, v| { let y = g.conv2d(v[0], v[1], 1, 1)?; let y = g.relu(y)?; g.sum(y) }),
            vec![img.clone(), k3],
        ),
        (
            "bias_add",
            Box::new(|g, v| { let y = g.bias_add(v[0], v[1])?; contract(g, y, 6) }),
            vec![img.clone(), bias.clone()],
        ),
        (
            "concat_channels",
            Box::new(|g, v| { let y = g.concat_channels(&[v[0], v[1]])?; contract(g, y, 7) }),
            vec![img.clone(), other],
        ),
        (
            "upsample_nearest",
            Box::new(|g, v| { let y = g.upsample_nearest(v[0], 2)?; contract(g, y, 8) }),
            vec![img.clone()],
        ),
        ("maxpool2d", Box::new(|g, v| { let y = g.maxpool2d(v[0])?; contract(g, y, 9) }), vec![img.clone()]),
        (
            "batch_stats_normalize",
            Box::new(|g, v| { let y = g.batch_stats_normalize(v[0], v[1], v[2])?; contract(g, y, 10) }),
            vec![img, gamma, bias],
        ),
        ("bce_with_logits", Box::new(move |g, v| g.bce_with_logits(v[0], &o)), vec![logits]),
        (
            "gather_pixels",
            Box::new(move |g, v| { let y = g.gather_pixels(v[0], &idx_g)?; contract(g, y, 11) }),
            vec![fmap.clone()],
        ),
        (
            "pack_descriptors",
            Box::new(move |g, v| {
                let s = g.gather_pixels(v[0], &idx_p)?;
                let o = g.gather_pixels(v[1], &idx_p)?;
                let d = g.pack_descriptors(s, o, 2)?;
                contract(g, d, 12)
            }),
            vec![fmap, loc],
        ),
        (
            "fourier_sample",
            Box::new(move |g, v| { let y = g.fourier_sample(v[0], &ts, 2)?; contract(g, y, 13) }),
            vec![desc.clone()],
        ),
        (
            "refine_points (field)",
            Box::new(move |g, v| {
                let c = g.input(coords_f.clone())?;
                let y = g.refine_points(c, v[0], &[1, 0], 3, 1.5)?;
                contract(g, y, 14)
            }),
            vec![field.clone()],
        ),
        (
            "refine_points (r = 0)",
            Box::new(|g, v| { let y = g.refine_points(v[0], v[1], &[0, 1], 0, 1.5)?; contract(g, y, 15) }),
            vec![coords, field],
        ),
        (
            "contour_loss",
            Box::new(move |g, v| contour_loss(g, &t_c, v[0], &ts_c).map_err(loss_err)),
            vec![desc.clone()],
        ),
        (
            "repr_loss",
            Box::new(move |g, v| repr_loss(g, &t_r, v[0], &[1.0, 0.5, 0.25]).map_err(loss_err)),
            vec![desc],
        ),
        (
            "tanh/sigmoid chain",
            Box::new(move |g, v| {
                let y = g.tanh(v[0])?;
                let y = g.mul(y, v[1])?;
                let y = g.sigmoid(y)?;
                g.mean(y)
            }),
            vec![a, b],
        ),
    ]
}

/// Gradient checks of every graph op and loss term on random inputs.
pub fn op_checks(seed: u64) -> Result<Vec<CheckResult>> {
    op_cases(seed)
        .into_iter()
        .map(|(name, f, xs)| timed(name, || grad_check_many(|g, v| f(g, v), &xs, EPS)))
        .collect()
}

/// The 16x16 synthetic image used by [`model_check`].
pub fn model_check_image(seed: u64) -> cpn_core::data::LabeledImage {
    let synth = SynthConfig {
        height: 16,
        width: 16,
        objects: [1, 2],
        radius: [3.0, 5.0],
        seed,
        ..SynthConfig::default()
    };
    generate_one(&synth, 0).expect("fits a 16x16 image")
}

/// Full training loss (detection, contour, refinement, representation)
/// through the network on one 16x16 image, with respect to every parameter.
pub fn model_check(cfg: &CpnConfig, seed: u64) -> Result<CheckResult> {
    let img = model_check_image(seed);
    let targets = build_targets(&img, cfg).map_err(model_err)?;
    let batch = Batch::new(cfg, &[(&img, &targets)]).map_err(model_err)?;
    let params = Parameters::init(&CpnConfig { seed, ..cfg.clone() }).map_err(model_err)?;
    let ts = uniform_ts(cfg.samples);
    let xs: Vec<Tensor> = params.tensors().cloned().collect();
    timed("cpn_loss through forward (16x16)", || {
        grad_check_many(
            |g, vars| batch_loss(g, cfg, &params, vars, &batch, &ts).map(|l| l.total).map_err(model_err),
            &xs,
            EPS,
        )
    })
}
