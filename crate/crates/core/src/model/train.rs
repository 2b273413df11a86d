use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    build_targets, cell_center, forward_graph, CpnConfig, ModelError, Parameters, Result, TSampling,
    TargetGrid, TrainConfig,
};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::LabeledImage;
use crate::efd::{uniform_ts, FourierDescriptor};
use crate::loss::{cpn_loss, points_l1, repr_from_parts, sample_targets, PositiveTerms};

/// Loss value and its components for one step (or averaged over an epoch).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub inst: f64,
    pub contour: f64,
    pub refine: f64,
    pub repr: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, o: &LossBreakdown, w: f64) {
        self.total += w * o.total;
        self.inst += w * o.inst;
        self.contour += w * o.contour;
        self.refine += w * o.refine;
        self.repr += w * o.repr;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub steps: usize,
    /// Mean over the epoch's steps.
    pub loss: LossBreakdown,
}

/// Inputs and targets of one training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 1, H, W]`.
    pub images: Tensor,
    /// Detection targets in logit order (`[B, 1, h2, w2]` flattened).
    pub o: Vec<f64>,
    /// `(batch, row, col)` of every positive cell.
    pub index: Vec<[usize; 3]>,
    /// Cell centers `[P, 2]` in pixels.
    pub centers: Vec<f64>,
    pub targets: Vec<FourierDescriptor>,
}

impl Batch {
    pub fn new(cfg: &CpnConfig, items: &[(&LabeledImage, &TargetGrid)]) -> Result<Self> {
        let (first, _) = items.first().ok_or(ModelError::EmptyDataset)?;
        let (h, w) = (first.height, first.width);
        let mut pixels = Vec::with_capacity(items.len() * h * w);
        let mut o = Vec::new();
        let mut index = Vec::new();
        let mut centers = Vec::new();
        let mut targets = Vec::new();
        for (b, (img, grid)) in items.iter().enumerate() {
            if (img.height, img.width) != (h, w) {
                return Err(ModelError::ImageSize {
                    height: img.height,
                    width: img.width,
                    reason: alloc::format!("batch mixes sizes with {h}x{w}"),
                });
            }
            pixels.extend_from_slice(&img.pixels);
            o.extend_from_slice(&grid.o);
            for t in &grid.cells {
                let (r, c) = (t.cell / grid.cols, t.cell % grid.cols);
                index.push([b, r, c]);
                let (cx, cy) = cell_center(r, c, cfg.stride);
                centers.push(cx);
                centers.push(cy);
                targets.push(t.descriptor.clone());
            }
        }
        Ok(Self {
            images: Tensor::new([items.len(), 1, h, w], pixels)?,
            o,
            index,
            centers,
            targets,
        })
    }
}

/// Graph handles of the loss and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub inst: Var,
    pub positives: Option<PositiveTerms>,
}

/// Records forward pass and full training loss of `batch` on `g`.
pub fn batch_loss(
    g: &mut Graph,
    cfg: &CpnConfig,
    params: &Parameters,
    vars: &[Var],
    batch: &Batch,
    ts: &[f64],
) -> Result<LossVars> {
    let images = g.input(batch.images.clone())?;
    let out = forward_graph(g, cfg, params, vars, images)?;
    let inst = g.bce_with_logits(out.logits, &batch.o)?;
    if batch.index.is_empty() {
        return Ok(LossVars {
            total: inst,
            inst,
            positives: None,
        });
    }
    let n = cfg.order;
    let rows = batch.index.len();
    let shape = g.gather_pixels(out.shape, &batch.index)?;
    let offsets = g.gather_pixels(out.offsets, &batch.index)?;
    let offsets = g.scale(offsets, cfg.stride as f64)?;
    let centers = g.input(Tensor::new([rows, 2], batch.centers.clone())?)?;
    let offsets = g.add(offsets, centers)?;
    let desc = g.pack_descriptors(shape, offsets, n)?;

    let target_pts = g.input(sample_targets(&batch.targets, ts)?)?;
    let sampled = g.fourier_sample(desc, ts, n)?;
    let contour = points_l1(g, sampled, target_pts)?;

    let which: Vec<usize> = batch.index.iter().map(|ix| ix[0]).collect();
    let refined = g.refine_points(sampled, out.residual, &which, cfg.refine_iterations, cfg.refine_margin)?;
    let refine = points_l1(g, refined, target_pts)?;

    let flat: Vec<f64> = batch.targets.iter().flat_map(|t| t.to_flat()).collect();
    let target_flat = g.input(Tensor::new([rows, 4 * n + 2], flat)?)?;
    let repr = repr_from_parts(g, desc, target_flat, &cfg.weights.flat_weights(n))?;

    let positives = PositiveTerms {
        contour,
        refine,
        repr,
    };
    let total = cpn_loss(g, out.logits, &batch.o, Some(positives), cfg.weights.lambda)?;
    Ok(LossVars {
        total,
        inst,
        positives: Some(positives),
    })
}

fn breakdown(g: &Graph, l: &LossVars) -> LossBreakdown {
    let v = |x: Var| g.value(x).data()[0];
    let mut b = LossBreakdown {
        total: v(l.total),
        inst: v(l.inst),
        ..Default::default()
    };
    if let Some(p) = l.positives {
        b.contour = v(p.contour);
        b.refine = v(p.refine);
        b.repr = v(p.repr);
    }
    b
}

/// SGD with momentum over a fixed dataset.
pub struct Trainer<'a> {
    cfg: CpnConfig,
    tcfg: TrainConfig,
    params: Parameters,
    velocity: Vec<Tensor>,
    rng: ChaCha8Rng,
    images: &'a [LabeledImage],
    targets: Vec<TargetGrid>,
    uniform: Vec<f64>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &CpnConfig,
        tcfg: &TrainConfig,
        params: Parameters,
        images: &'a [LabeledImage],
    ) -> Result<Self> {
        cfg.validate()?;
        tcfg.validate()?;
        params.check_layout(cfg)?;
        if images.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        for img in images {
            cfg.check_image(img.height, img.width)?;
        }
        let targets = images
            .iter()
            .map(|img| build_targets(img, cfg))
            .collect::<Result<Vec<_>>>()?;
        let velocity = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Ok(Self {
            cfg: cfg.clone(),
            tcfg: tcfg.clone(),
            params,
            velocity,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de_7a1b_0001),
            images,
            targets,
            uniform: uniform_ts(cfg.samples),
            epoch: 0,
        })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    pub fn targets(&self) -> &[TargetGrid] {
        &self.targets
    }

    fn draw_ts(&mut self) -> Vec<f64> {
        match self.tcfg.t_sampling {
            TSampling::Uniform => self.uniform.clone(),
            TSampling::Random => loop {
                let mut ts: Vec<f64> = (0..self.cfg.samples)
                    .map(|_| self.rng.random::<f64>())
                    .collect();
                ts.sort_by(f64::total_cmp);
                if ts.windows(2).all(|w| w[0] < w[1]) {
                    break ts;
                }
            },
        }
    }

    /// One optimizer step on the given image indices.
    pub fn step(&mut self, batch_ids: &[usize]) -> Result<LossBreakdown> {
        let items: Vec<(&LabeledImage, &TargetGrid)> = batch_ids
            .iter()
            .map(|&i| (&self.images[i], &self.targets[i]))
            .collect();
        let batch = Batch::new(&self.cfg, &items)?;
        let ts = self.draw_ts();

        let mut g = Graph::new();
        let vars = self
            .params
            .tensors()
            .map(|t| g.param(t.clone()))
            .collect::<core::result::Result<Vec<_>, _>>()?;
        let loss = batch_loss(&mut g, &self.cfg, &self.params, &vars, &batch, &ts)?;
        let stats = breakdown(&g, &loss);
        if !stats.total.is_finite() {
            return Err(ModelError::Diverged {
                epoch: self.epoch + 1,
                step: 0,
                loss: stats.total,
            });
        }
        let grads = g.backward(loss.total)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect();

        let mut scale = 1.0;
        if self.tcfg.grad_clip > 0.0 {
            let norm = libm::sqrt(
                grads
                    .iter()
                    .flat_map(|t| t.data())
                    .map(|v| v * v)
                    .sum::<f64>(),
            );
            if norm > self.tcfg.grad_clip {
                scale = self.tcfg.grad_clip / norm;
            }
        }
        let (lr, mu) = (self.tcfg.learning_rate, self.tcfg.momentum);
        for ((p, v), gr) in self.params.tensors_mut().zip(&mut self.velocity).zip(&grads) {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(gr.data()) {
                *vv = mu * *vv + scale * gv;
                *pv -= lr * *vv;
            }
        }
        if self.params.tensors().any(|t| !t.is_finite()) {
            return Err(ModelError::Diverged {
                epoch: self.epoch + 1,
                step: 0,
                loss: f64::NAN,
            });
        }
        Ok(stats)
    }

    /// One pass over the shuffled dataset.
    pub fn epoch(&mut self) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(&mut self.rng);
        let chunks: Vec<Vec<usize>> = order
            .chunks(self.tcfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        let mut mean = LossBreakdown::default();
        let w = 1.0 / chunks.len() as f64;
        for (step, ids) in chunks.iter().enumerate() {
            let s = self.step(ids).map_err(|e| match e {
                ModelError::Diverged { epoch, loss, .. } => ModelError::Diverged { epoch, step, loss },
                other => other,
            })?;
            mean.accumulate(&s, w);
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            steps: chunks.len(),
            loss: mean,
        })
    }
}

/// Trains from `Parameters::init(cfg)` for `tcfg.epochs` epochs, calling
/// `on_epoch` after each one.
pub fn train<F>(
    images: &[LabeledImage],
    cfg: &CpnConfig,
    tcfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Parameters, Vec<EpochStats>)>
where
    F: FnMut(&EpochStats, &Parameters),
{
    let mut trainer = Trainer::new(cfg, tcfg, Parameters::init(cfg)?, images)?;
    let mut history = Vec::with_capacity(tcfg.epochs);
    for _ in 0..tcfg.epochs {
        let stats = trainer.epoch()?;
        on_epoch(&stats, trainer.params());
        history.push(stats);
    }
    Ok((trainer.into_params(), history))
}
