use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::ops::Op;
use super::{AutodiffError, Result, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub(super) graph: u64,
    pub(super) index: usize,
}

pub(super) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// A user-supplied operation with its own backward rule.
///
/// Used for extensions and for test fixtures that need a deliberately
/// broken derivative.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

/// Execution record of one forward pass.
pub struct Graph {
    id: u64,
    pub(super) nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input that never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite("graph leaf"));
        }
        Ok(self.push_node(value, Op::Leaf, requires_grad))
    }

    /// Value of a recorded variable.
    ///
    /// Panics if `var` was created on another graph.
    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.graph, self.id, "variable belongs to a different graph");
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        var.graph == self.id && self.nodes[var.index].requires_grad
    }

    pub(super) fn check(&self, var: Var) -> Result<&Tensor> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(AutodiffError::Detached);
        }
        Ok(&self.nodes[var.index].value)
    }

    pub(super) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.index].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Applies a [`CustomOp`].
    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let values = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let out = op.forward(&values)?;
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        ))
    }

    /// Hash of every discrete branch taken so far: ReLU and abs signs,
    /// max-pool winners and refinement lookup cells.
    pub fn branch_signature(&self) -> u64 {
        // FNV-1a over the emitted words.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut emit = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for node in &self.nodes {
            node.op.branches(self, &mut emit);
        }
        h
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.check(loss)?;
        if value.len() != 1 {
            return Err(AutodiffError::NotScalar(value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(Tensor::full(value.shape(), 1.0));
        for index in (0..=loss.index).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let needs = |v: Var| self.nodes[v.index].requires_grad;
            for (input, contribution) in node.op.backward(self, &node.value, &grad, &needs) {
                match &mut grads[input.index] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[index] = Some(grad);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it received one.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when `var` had no path to the loss.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
