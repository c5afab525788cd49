//! Reverse-mode differentiation over vector-valued primitives.
//!
//! Each primitive computes its value on insertion and supplies a
//! hand-written adjoint. Nodes are stored in insertion order, which is a
//! topological order, so the backward pass is a single reverse sweep.

mod clip;
pub mod ops;

pub use clip::{clip_to_norm, percentile, AutoClipper, ClipMode, AUTO_CLIP_PERCENTILE, FIXED_CLIP_NORM};

use crate::error::{Error, Result};

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Values an operation sees during its backward pass.
pub struct OpContext<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub output: &'a [f64],
    /// Whether each input needs a gradient.
    pub needs: Vec<bool>,
}

pub trait Op {
    fn name(&self) -> &'static str;
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>>;
    /// Gradient with respect to each input; `None` for no contribution.
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>>;
}

struct Node {
    value: Vec<f64>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    /// Nodes whose adjoint ran, in visiting order.
    pub visited: Vec<usize>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when nothing flowed into it.
    pub fn dense(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, inputs: Vec<Var>, op: Option<Box<dyn Op>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable parameter.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    pub fn apply(&mut self, mut op: impl Op + 'static, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&[f64]> = inputs.iter().map(|v| self.nodes[v.0].value.as_slice()).collect();
            op.forward(&vals)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, inputs.to_vec(), Some(Box::new(op)), requires_grad))
    }

    /// Passes the value through and blocks every gradient into `v`.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, vec![v], Some(Box::new(ops::StopGradient)), false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.as_ref().map_or("leaf", |o| o.name())
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "loss node {} has {} values",
                loss.0,
                self.nodes[loss.0].value.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut visited = Vec::new();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            let ctx = OpContext {
                inputs: node.inputs.iter().map(|v| self.nodes[v.0].value.as_slice()).collect(),
                output: &node.value,
                needs: node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect(),
            };
            let input_grads = op.backward(&ctx, &g)?;
            grads[i] = Some(g);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if ig.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { node: i, op: op.name() });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}
