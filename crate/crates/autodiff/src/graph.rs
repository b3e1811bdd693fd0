use crate::ops;
use crate::{Float, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Classification target for [`Graph::cross_entropy`].
#[derive(Clone, Debug)]
pub enum Target<F> {
    /// One class index per row.
    Hard(Vec<usize>),
    /// One probability row per logit row (`[N, K]`).
    Soft(Tensor<F>),
}

pub(crate) enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Relu(Var),
    Tanh(Var),
    ChannelBias(Var, Var),
    ScaleShift { x: Var, scale: Option<Var>, shift: Option<Var> },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Conv2d { x: Var, w: Var },
    Upsample2x(Var),
    AvgPool2x(Var),
    MaxPool2x(Var, Vec<u32>),
    SumSpatial(Var),
    Reshape(Var),
    BatchNorm { x: Var, inv_std: Vec<F> },
    Softmax(Var),
    CrossEntropy { logits: Var, target: Target<F>, probs: Vec<F> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SelectRows { x: Var, idx: Vec<usize> },
    Rotate90 { x: Var, k: usize },
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    SpectralNorm { w: Var, u: Vec<F>, v: Vec<F>, sigma: F },
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// A single-use reverse-mode tape.
///
/// Every operation evaluates eagerly and records itself; [`Graph::backward`]
/// then walks the tape in reverse creation order. Nodes that do not depend
/// on any gradient-requiring leaf are never differentiated.
pub struct Graph<F> {
    pub(crate) nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Copies the current value of `v` into a fresh constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Graph::backward) root w.r.t. `v`,
    /// if `v` participated.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Accumulates d(root)/d(node) for every node reachable from `root`.
    ///
    /// The seed gradient is all ones, so a non-scalar root is treated as the
    /// sum of its elements.
    pub fn backward(&mut self, root: Var) {
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return;
        }
        let seed = Tensor::full(self.nodes[root.0].value.shape(), F::one());
        self.grads[root.0] = Some(seed);
        let Graph { nodes, grads } = self;
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let mut sink = GradSink { nodes, grads: &mut grads[..i] };
            ops::backward(nodes, i, &gout, &mut sink);
            grads[i] = Some(gout);
        }
    }
}

/// Accumulator for parent gradients during the reverse sweep.
pub(crate) struct GradSink<'a, F> {
    nodes: &'a [Node<F>],
    grads: &'a mut [Option<Tensor<F>>],
}

impl<F: Float> GradSink<'_, F> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn add(&mut self, v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape(), "gradient shape");
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `g` reshaped to `v`'s shape.
    pub(crate) fn add_reshaped(&mut self, v: Var, g: Tensor<F>) {
        let shape = self.nodes[v.0].value.shape().to_vec();
        self.add(v, g.reshaped(&shape));
    }
}
