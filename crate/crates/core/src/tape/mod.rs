//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every operation appends a node holding its output value and the indices
//! of its inputs. Nodes can only reference earlier nodes, so the tape is
//! topologically ordered by construction and [`Tape::backward`] is a single
//! reverse sweep.

mod backward;
mod broadcast;
mod ops;

pub use backward::Gradients;
pub(crate) use broadcast::BroadcastMap;
pub(crate) use ops::sigmoid as ops_sigmoid;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Neg,
    /// `ln(1 + e^x)`
    Softplus,
    Square,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Local gradient rule of a [`Tape::custom`] node: receives the input values,
/// the output value and the output gradient, returns one gradient buffer per
/// input.
pub type BackwardFn<S> = Box<dyn Fn(&[&Tensor<S>], &Tensor<S>, &[S]) -> Vec<Vec<S>>>;

pub(crate) enum Op<S> {
    Leaf,
    Unary {
        x: Var,
        kind: UnaryKind,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
        map: BroadcastMap,
    },
    Scale {
        x: Var,
        factor: S,
    },
    Shift {
        x: Var,
    },
    Matmul {
        a: Var,
        b: Var,
        dims: MatmulDims,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        relu: bool,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Sum {
        x: Var,
        axis: usize,
        mean: bool,
    },
    SumAll {
        x: Var,
        mean: bool,
    },
    Reshape {
        x: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    BroadcastTo {
        x: Var,
        map: BroadcastMap,
    },
    SegmentSum {
        x: Var,
        lens: Vec<usize>,
    },
    NormalizeLast {
        x: Var,
    },
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn<S>,
    },
}

/// Geometry of a (batched) matrix product `op(A) · op(B)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub trans_a: bool,
    pub trans_b: bool,
}

impl MatmulDims {
    /// Row and column strides of `op(A)` inside A's buffer.
    pub(crate) fn a_view(&self) -> (isize, isize) {
        if self.trans_a {
            (1, self.m as isize)
        } else {
            (self.k as isize, 1)
        }
    }

    pub(crate) fn b_view(&self) -> (isize, isize) {
        if self.trans_b {
            (1, self.k as isize)
        } else {
            (self.n as isize, 1)
        }
    }
}

pub(crate) struct Node<S> {
    pub value: Tensor<S>,
    pub op: Op<S>,
    pub requires_grad: bool,
}

/// Recording of executed operations. Single-threaded; build one tape per
/// forward pass and drop it after [`backward`](Tape::backward).
pub struct Tape<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Shorthand for a trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Shorthand for a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation whose output was computed by the caller and whose
    /// local gradient is given by `backward`.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<S>, backward: BackwardFn<S>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            inputs,
        )
    }
}
