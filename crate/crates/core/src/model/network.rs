use alloc::format;
use alloc::vec::Vec;

use super::{cell_center, CpnConfig, ModelError, Parameters, Result};
use crate::autodiff::{Graph, Tensor, Var};
use crate::efd::FourierDescriptor;
use crate::refine::ResidualField;

/// Graph handles of the four head outputs.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `[B, 1, h2, w2]` pre-sigmoid scores.
    pub logits: Var,
    /// `[B, 4N, h2, w2]` shape coefficients `a_1..a_N, b_1..b_N, c_1..c_N, d_1..d_N`.
    pub shape: Var,
    /// `[B, 2, h2, w2]` offsets from the cell center in units of the stride.
    pub offsets: Var,
    /// `[B, 2, H, W]` residual field.
    pub residual: Var,
}

struct Net<'a> {
    cfg: &'a CpnConfig,
    params: &'a Parameters,
    vars: &'a [Var],
}

impl Net<'_> {
    fn var(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::Parameter(name.into()))
    }

    fn block(&self, g: &mut Graph, mut x: Var, prefix: &str) -> Result<Var> {
        for k in 0..self.cfg.convs_per_block {
            let w = self.var(&format!("{prefix}.{k}.weight"))?;
            let b = self.var(&format!("{prefix}.{k}.bias"))?;
            let gamma = self.var(&format!("{prefix}.{k}.gamma"))?;
            let beta = self.var(&format!("{prefix}.{k}.beta"))?;
            x = g.conv2d(x, w, 1, 1)?;
            x = g.bias_add(x, b)?;
            x = g.relu(x)?;
            x = g.batch_stats_normalize(x, gamma, beta)?;
        }
        Ok(x)
    }

    fn head(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        let y = g.conv2d(x, w, 1, 0)?;
        Ok(g.bias_add(y, b)?)
    }
}

/// Records the network on `g`. `vars` holds one variable per entry of
/// `params`, in order; `images` is `[B, 1, H, W]`.
pub fn forward_graph(
    g: &mut Graph,
    cfg: &CpnConfig,
    params: &Parameters,
    vars: &[Var],
    images: Var,
) -> Result<Outputs> {
    let shape = g.value(images).shape().to_vec();
    let &[_, 1, h, w] = shape.as_slice() else {
        return Err(ModelError::ImageSize {
            height: 0,
            width: 0,
            reason: format!("expected [B, 1, H, W] input, got {shape:?}"),
        });
    };
    cfg.check_image(h, w)?;
    if vars.len() != params.len() {
        return Err(ModelError::Parameter(format!(
            "{} variables for {} parameters",
            vars.len(),
            params.len()
        )));
    }
    let net = Net { cfg, params, vars };
    let levels = cfg.widths.len();

    let mut skips = Vec::with_capacity(levels);
    let mut x = images;
    for l in 0..levels {
        if l > 0 {
            x = g.maxpool2d(x)?;
        }
        x = net.block(g, x, &format!("enc{l}"))?;
        skips.push(x);
    }
    let mut features = skips.clone();
    let mut cur = skips[levels - 1];
    for l in (0..levels - 1).rev() {
        let up = g.upsample_nearest(cur, 2)?;
        let cat = g.concat_channels(&[up, skips[l]])?;
        cur = net.block(g, cat, &format!("dec{l}"))?;
        features[l] = cur;
    }
    let p1 = features[0];
    let p2 = features[cfg.p2_level()];

    Ok(Outputs {
        logits: net.head(g, p2, "cls")?,
        shape: net.head(g, p2, "shape")?,
        offsets: net.head(g, p2, "loc")?,
        residual: net.head(g, p1, "refine")?,
    })
}

/// Dense per-cell predictions for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGrid {
    pub order: usize,
    pub stride: usize,
    /// Proposal grid rows `h2` and columns `w2`.
    pub rows: usize,
    pub cols: usize,
    /// `h2 * w2` post-sigmoid scores, row-major.
    pub scores: Vec<f64>,
    /// `h2 * w2 * 4N` shape coefficients, cell-major.
    pub shape_coeffs: Vec<f64>,
    /// `h2 * w2 * 2` offsets of `(a_0, c_0)` from the cell center, in pixels.
    pub offsets: Vec<f64>,
    pub residual_field: ResidualField,
}

impl ProposalGrid {
    /// Full descriptor of a cell with absolute offset.
    pub fn descriptor(&self, cell: usize) -> FourierDescriptor {
        let n = self.order;
        let (cx, cy) = cell_center(cell / self.cols, cell % self.cols, self.stride);
        let s = &self.shape_coeffs[cell * 4 * n..(cell + 1) * 4 * n];
        let mut a = Vec::with_capacity(n + 1);
        a.push(cx + self.offsets[2 * cell]);
        a.extend_from_slice(&s[..n]);
        let mut c = Vec::with_capacity(n + 1);
        c.push(cy + self.offsets[2 * cell + 1]);
        c.extend_from_slice(&s[2 * n..3 * n]);
        FourierDescriptor {
            order: n,
            a,
            b: s[n..2 * n].to_vec(),
            c,
            d: s[3 * n..].to_vec(),
        }
    }
}

fn channels_last(t: &Tensor, batch: usize) -> Vec<f64> {
    let [_, c, h, w] = <[usize; 4]>::try_from(t.shape()).expect("rank 4 output");
    let plane = h * w;
    let base = batch * c * plane;
    let mut out = Vec::with_capacity(c * plane);
    for i in 0..plane {
        out.extend((0..c).map(|ch| t.data()[base + ch * plane + i]));
    }
    out
}

/// Runs the network on one `H x W` grayscale image with values in `[0, 1]`.
pub fn forward(cfg: &CpnConfig, params: &Parameters, image: &[f64], height: usize, width: usize) -> Result<ProposalGrid> {
    if image.len() != height * width {
        return Err(ModelError::ImageSize {
            height,
            width,
            reason: format!("{} pixel values", image.len()),
        });
    }
    let mut g = Graph::new();
    let vars = params
        .tensors()
        .map(|t| g.input(t.clone()))
        .collect::<core::result::Result<Vec<_>, _>>()?;
    let x = g.input(Tensor::new([1, 1, height, width], image.to_vec())?)?;
    let out = forward_graph(&mut g, cfg, params, &vars, x)?;

    let logits = g.value(out.logits);
    let [_, _, rows, cols] = <[usize; 4]>::try_from(logits.shape()).expect("rank 4 output");
    let scores = logits.data().iter().map(|&z| crate::math::sigmoid(z)).collect();
    let s = cfg.stride as f64;
    let offsets = channels_last(g.value(out.offsets), 0)
        .into_iter()
        .map(|v| v * s)
        .collect();
    let residual = g.value(out.residual);
    let residual_field = ResidualField::from_planar(height, width, residual.data().to_vec())?;
    Ok(ProposalGrid {
        order: cfg.order,
        stride: cfg.stride,
        rows,
        cols,
        scores,
        shape_coeffs: channels_last(g.value(out.shape), 0),
        offsets,
        residual_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn output_shapes() {
        let cfg = CpnConfig::default();
        let p = Parameters::init(&cfg).unwrap();
        let grid = forward(&cfg, &p, &vec![0.3; 32 * 32], 32, 32).unwrap();
        assert_eq!((grid.rows, grid.cols), (16, 16));
        assert_eq!(grid.scores.len(), 256);
        assert_eq!(grid.shape_coeffs.len(), 256 * 16);
        assert_eq!(grid.offsets.len(), 256 * 2);
        assert_eq!(grid.residual_field.planar().len(), 32 * 32 * 2);
        assert!(grid.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn zero_weights_give_half_scores_and_zero_offsets() {
        let cfg = CpnConfig::default();
        let p = Parameters::zeros(&cfg).unwrap();
        let img: Vec<f64> = (0..32 * 32).map(|i| (i % 7) as f64 / 7.0).collect();
        let grid = forward(&cfg, &p, &img, 32, 32).unwrap();
        assert!(grid.scores.iter().all(|&s| s == 0.5));
        assert!(grid.offsets.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = CpnConfig::default();
        let p = Parameters::init(&cfg).unwrap();
        let img: Vec<f64> = (0..32 * 32).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let a = forward(&cfg, &p, &img, 32, 32).unwrap();
        let b = forward(&cfg, &p, &img, 32, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = CpnConfig::default();
        let p = Parameters::init(&cfg).unwrap();
        assert!(forward(&cfg, &p, &vec![0.0; 30 * 32], 30, 32).is_err());
        assert!(forward(&cfg, &p, &vec![0.0; 10], 32, 32).is_err());
    }
}
