use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CpnConfig, ModelError, Result};
use crate::autodiff::Tensor;

/// Named trainable tensors, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

/// Names and shapes of every parameter the configuration needs.
pub(crate) fn layout(cfg: &CpnConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let conv_block = |prefix: &str, mut cin: usize, cout: usize, out: &mut Vec<(String, Vec<usize>)>| {
        for k in 0..cfg.convs_per_block {
            out.push((format!("{prefix}.{k}.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("{prefix}.{k}.bias"), vec![cout]));
            out.push((format!("{prefix}.{k}.gamma"), vec![cout]));
            out.push((format!("{prefix}.{k}.beta"), vec![cout]));
            cin = cout;
        }
    };
    let w = &cfg.widths;
    for l in 0..w.len() {
        let cin = if l == 0 { 1 } else { w[l - 1] };
        conv_block(&format!("enc{l}"), cin, w[l], &mut out);
    }
    for l in (0..w.len().saturating_sub(1)).rev() {
        conv_block(&format!("dec{l}"), w[l + 1] + w[l], w[l], &mut out);
    }
    let c2 = w[cfg.p2_level()];
    let c1 = w[0];
    for (name, cout, cin) in [
        ("cls", 1, c2),
        ("shape", 4 * cfg.order, c2),
        ("loc", 2, c2),
        ("refine", 2, c1),
    ] {
        out.push((format!("{name}.weight"), vec![cout, cin, 1, 1]));
        out.push((format!("{name}.bias"), vec![cout]));
    }
    out
}

impl Parameters {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Self { entries, index }
    }

    /// Fresh parameters: weights and biases uniform in `+-1/sqrt(fan_in)`,
    /// normalization scale 1 and shift 0. Deterministic in `cfg.seed`.
    pub fn init(cfg: &CpnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fan_in = 1;
        let entries = layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let data = if name.ends_with(".gamma") {
                    vec![1.0; len]
                } else if name.ends_with(".beta") {
                    vec![0.0; len]
                } else {
                    if name.ends_with(".weight") {
                        fan_in = shape[1..].iter().product();
                    }
                    let bound = 1.0 / libm::sqrt(fan_in as f64);
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let t = Tensor::new(shape, data).expect("layout shapes are non-empty");
                (name, t)
            })
            .collect();
        Ok(Self::from_entries(entries))
    }

    /// All-zero parameters (normalization scales included).
    pub fn zeros(cfg: &CpnConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::from_entries(
            layout(cfg)
                .into_iter()
                .map(|(n, s)| (n, Tensor::zeros(s)))
                .collect(),
        ))
    }

    /// Checks that names and shapes match what `cfg` expects.
    pub fn check_layout(&self, cfg: &CpnConfig) -> Result<()> {
        let want = layout(cfg);
        if want.len() != self.entries.len() {
            return Err(ModelError::Parameter(format!(
                "expected {} tensors, found {}",
                want.len(),
                self.entries.len()
            )));
        }
        for (name, shape) in want {
            match self.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                _ => return Err(ModelError::Parameter(name)),
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = CpnConfig::default();
        let a = Parameters::init(&cfg).unwrap();
        let b = Parameters::init(&cfg).unwrap();
        assert_eq!(a, b);
        a.check_layout(&cfg).unwrap();
        let w = a.get("enc1.0.weight").unwrap();
        let bound = 1.0 / libm::sqrt(8.0 * 9.0);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("enc0.0.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        let other = Parameters::init(&CpnConfig {
            seed: 1,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn layout_mismatch_detected() {
        let cfg = CpnConfig::default();
        let p = Parameters::init(&cfg).unwrap();
        assert!(p.check_layout(&CpnConfig::with_order(3)).is_err());
    }
}
