//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every value produced during one forward pass. Tensors are
//! lightweight handles into it. Operations are appended in creation order, so
//! the node list is already a topological order and [`Graph::backward`] walks
//! it in reverse.
//!
//! Parameters are borrowed from a [`ParamStore`] for the lifetime of the graph,
//! which lets several threads build independent graphs over the same weights.

pub mod gradcheck;
mod kernels;
mod ops;

use std::borrow::Cow;
use std::fmt;

use thiserror::Error;

pub use crate::params::{ParamId, ParamStore};
pub use kernels::{dot, matmul_into, matmul_nt_into};
pub use ops::logsumexp_slice;

/// Scalar type used throughout the crate.
pub type Real = f64;

/// Stand-in for log(0) inside dynamic programs. Large enough to dominate any
/// real log-probability, small enough that sums of a few of them stay finite.
pub const LOG_ZERO: Real = -1.0e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: reduction over an empty slice")]
    EmptySlice { op: &'static str },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

impl Tensor {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module.
pub trait CustomGrad: Send + Sync {
    /// Given the values of the inputs and the gradient of the output, return
    /// one gradient buffer per input (same lengths as the inputs).
    fn backward(&self, inputs: &[&[Real]], output: &[Real], out_grad: &[Real]) -> Vec<Vec<Real>>;
}

pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Tensor,
        b: Tensor,
        trans_b: bool,
    },
    Add {
        a: Tensor,
        b: Tensor,
    },
    Sub {
        a: Tensor,
        b: Tensor,
    },
    Mul {
        a: Tensor,
        b: Tensor,
    },
    Scale {
        a: Tensor,
        c: Real,
    },
    AddScalar {
        a: Tensor,
    },
    Relu {
        a: Tensor,
    },
    Tanh {
        a: Tensor,
    },
    Exp {
        a: Tensor,
    },
    Gather {
        table: Tensor,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Tensor,
        gain: Tensor,
        bias: Tensor,
        xhat: Vec<Real>,
        rstd: Vec<Real>,
    },
    Transpose {
        a: Tensor,
    },
    Reshape {
        a: Tensor,
    },
    Concat {
        parts: Vec<Tensor>,
        axis: usize,
    },
    Slice {
        a: Tensor,
        axis: usize,
        start: usize,
    },
    LogSoftmax {
        a: Tensor,
        axis: usize,
    },
    Softmax {
        a: Tensor,
        axis: usize,
    },
    LogSumExp {
        a: Tensor,
        axis: usize,
    },
    Sum {
        a: Tensor,
    },
    Select {
        a: Tensor,
        idx: Vec<usize>,
    },
    Dropout {
        a: Tensor,
        keep: Vec<Real>,
    },
    Custom {
        inputs: Vec<Tensor>,
        grad: Box<dyn CustomGrad>,
    },
}

pub(crate) struct Node<'p> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Cow<'p, [Real]>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<Real>>,
    pub(crate) param: Option<ParamId>,
}

/// A computation graph. Dropping it frees every intermediate value.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    record: bool,
    param_nodes: Vec<Option<Tensor>>,
}

impl fmt::Debug for Graph<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("record", &self.record)
            .finish()
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'p> Graph<'p> {
    /// A graph that records operations for backpropagation.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
            param_nodes: Vec::new(),
        }
    }

    /// A graph that only evaluates; every node is a leaf and `backward` is a no-op.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [Real]>, op: Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(numel(&shape), value.len());
        let (op, requires_grad) = if self.record {
            (op, requires_grad)
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Tensor(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(&mut self, shape: Vec<usize>, value: Vec<Real>, op: Op, parents: &[Tensor]) -> Tensor {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(shape, Cow::Owned(value), op, rg)
    }

    fn check_len(shape: &[usize], len: usize, op: &'static str) -> Result<()> {
        if numel(shape) != len {
            return Err(TensorError::ShapeMismatch {
                op,
                left: shape.to_vec(),
                right: vec![len],
            });
        }
        Ok(())
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], values: Vec<Real>) -> Result<Tensor> {
        Self::check_len(shape, values.len(), "constant")?;
        Ok(self.push(shape.to_vec(), Cow::Owned(values), Op::Leaf, false))
    }

    /// A leaf whose gradient is accumulated by `backward`.
    pub fn variable(&mut self, shape: &[usize], values: Vec<Real>) -> Result<Tensor> {
        Self::check_len(shape, values.len(), "variable")?;
        let t = self.push(shape.to_vec(), Cow::Owned(values), Op::Leaf, true);
        if self.record {
            self.nodes[t.0].requires_grad = true;
        }
        Ok(t)
    }

    /// Borrow a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Tensor {
        if let Some(Some(t)) = self.param_nodes.get(id.index()) {
            return *t;
        }
        let shape = store.shape(id).to_vec();
        let t = self.push(shape, Cow::Borrowed(store.value(id)), Op::Leaf, true);
        if self.record {
            self.nodes[t.0].requires_grad = true;
        }
        self.nodes[t.0].param = Some(id);
        if self.param_nodes.len() <= id.index() {
            self.param_nodes.resize(id.index() + 1, None);
        }
        self.param_nodes[id.index()] = Some(t);
        t
    }

    pub fn value(&self, t: Tensor) -> &[Real] {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, t: Tensor) -> Option<&[Real]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar(&self, t: Tensor) -> Real {
        self.nodes[t.0].value[0]
    }

    /// Gradients of every parameter touched by this graph, in parameter order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[Real])> {
        self.param_nodes
            .iter()
            .flatten()
            .filter_map(|t| {
                let n = &self.nodes[t.0];
                Some((n.param?, n.grad.as_deref()?))
            })
            .collect()
    }

    /// Reset accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Register an operation whose backward rule lives elsewhere.
    pub fn custom(
        &mut self,
        inputs: &[Tensor],
        shape: &[usize],
        value: Vec<Real>,
        grad: Box<dyn CustomGrad>,
    ) -> Result<Tensor> {
        Self::check_len(shape, value.len(), "custom")?;
        Ok(self.push_op(
            shape.to_vec(),
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                grad,
            },
            inputs,
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`]; intermediate gradients are transient.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        let shape = &self.nodes[loss.0].shape;
        if numel(shape) != 1 {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<Real>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad {
                    grads[id] = Some(g);
                }
                continue;
            }
            ops::backward_node(&self.nodes, id, &g, &mut grads);
        }
        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
