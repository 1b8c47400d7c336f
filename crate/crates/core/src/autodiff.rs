//! Reverse-mode automatic differentiation on an explicit operation graph.
//!
//! The differentiator appends adjoint computations to the graph as ordinary
//! nodes instead of evaluating them eagerly. A scalar built from first-order
//! gradient nodes (such as a squared input-gradient norm) can therefore be
//! differentiated again, which is what double backpropagation needs.
//!
//! ReLU is given the subgradient 0 at exactly 0, and the masks emitted by
//! ReLU/pooling backward passes are treated as locally constant, so second
//! derivatives are exact almost everywhere for piecewise-linear networks.
//! Evaluation is deterministic: identical leaf values reproduce identical
//! node values bit for bit.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Var { name: String },
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Relu(NodeId),
    ReluMask(NodeId),
    LeakyRelu(NodeId, f64),
    LeakyMask(NodeId, f64),
    MatVec(NodeId, NodeId),
    TMatVec(NodeId, NodeId),
    Outer(NodeId, NodeId),
    ChannelBroadcast(NodeId),
    ChannelSum(NodeId),
    Conv2d { x: NodeId, k: NodeId },
    Conv2dBackInput { g: NodeId, k: NodeId },
    Conv2dBackKernel { x: NodeId, g: NodeId, kh: usize, kw: usize },
    MaxPool2(NodeId),
    MaxUnpool2 { g: NodeId, x: NodeId },
    MaxSelect2 { a: NodeId, x: NodeId },
    Reshape(NodeId),
    Sum(NodeId),
    Broadcast(NodeId),
    Index(NodeId, usize),
    OneHot { s: NodeId, index: usize },
    LogSumExp(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    /// Payload for `Const` nodes.
    value: Option<Tensor>,
}

/// Computation graph: topologically ordered operation records.
///
/// Built graphs are immutable during evaluation and may be shared read-only
/// across threads; every evaluation owns its own workspace of node values.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    vars: Vec<(String, NodeId)>,
}

/// Leaf bindings for one evaluation. Holds references, so rebinding a large
/// parameter set per call is free.
#[derive(Debug, Default)]
pub struct Bindings<'a> {
    entries: Vec<(NodeId, &'a Tensor)>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Bindings::default()
    }

    pub fn bind(&mut self, id: NodeId, value: &'a Tensor) {
        self.entries.push((id, value));
    }

    pub fn with(mut self, id: NodeId, value: &'a Tensor) -> Self {
        self.bind(id, value);
        self
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Declares a differentiable leaf. Names must be unique per graph.
    pub fn var(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if self.vars.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidConfig(format!("duplicate leaf name '{name}'")));
        }
        let id = self.push(
            Op::Var {
                name: name.to_string(),
            },
            shape.to_vec(),
            None,
        );
        self.vars.push((name.to_string(), id));
        Ok(id)
    }

    pub fn var_id(&self, name: &str) -> Option<NodeId> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const, shape, Some(value))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Option<Tensor>) -> NodeId {
        self.nodes.push(Node { op, shape, value });
        NodeId(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(format!(
                "{op}(node {}, node {}): shape {:?} vs {:?}",
                a.0, b.0, self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Add(a, b), shape, None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Sub(a, b), shape, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(Op::Mul(a, b), shape, None))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Neg(a), shape, None)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Scale(a, factor), shape, None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Exp(a), shape, None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Relu(a), shape, None)
    }

    fn relu_mask(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::ReluMask(a), shape, None)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::LeakyRelu(a, slope), shape, None)
    }

    fn leaky_mask(&mut self, a: NodeId, slope: f64) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::LeakyMask(a, slope), shape, None)
    }

    /// `w (m,n) · x (n) -> (m)`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let ws = &self.nodes[w.0].shape;
        let xs = &self.nodes[x.0].shape;
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::shape(format!(
                "matvec(node {}, node {}): shape {ws:?} vs {xs:?}",
                w.0, x.0
            )));
        }
        let m = ws[0];
        Ok(self.push(Op::MatVec(w, x), vec![m], None))
    }

    /// `wᵀ · y` for `w (m,n)`, `y (m)` -> `(n)`.
    pub fn tmatvec(&mut self, w: NodeId, y: NodeId) -> Result<NodeId> {
        let ws = &self.nodes[w.0].shape;
        let ys = &self.nodes[y.0].shape;
        if ws.len() != 2 || ys.len() != 1 || ws[0] != ys[0] {
            return Err(Error::shape(format!(
                "tmatvec(node {}, node {}): shape {ws:?} vs {ys:?}",
                w.0, y.0
            )));
        }
        let n = ws[1];
        Ok(self.push(Op::TMatVec(w, y), vec![n], None))
    }

    /// Outer product `a (m) ⊗ b (n) -> (m,n)`.
    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ashape = &self.nodes[a.0].shape;
        let bshape = &self.nodes[b.0].shape;
        if ashape.len() != 1 || bshape.len() != 1 {
            return Err(Error::shape(format!(
                "outer(node {}, node {}): expected vectors, got {ashape:?} vs {bshape:?}",
                a.0, b.0
            )));
        }
        let shape = vec![ashape[0], bshape[0]];
        Ok(self.push(Op::Outer(a, b), shape, None))
    }

    /// Tiles a channel vector `(c)` over the channels-last `shape`.
    pub fn channel_broadcast(&mut self, b: NodeId, shape: &[usize]) -> Result<NodeId> {
        let bs = &self.nodes[b.0].shape;
        if bs.len() != 1 || shape.last() != Some(&bs[0]) {
            return Err(Error::shape(format!(
                "channel_broadcast(node {}): channels {bs:?} vs target {shape:?}",
                b.0
            )));
        }
        Ok(self.push(Op::ChannelBroadcast(b), shape.to_vec(), None))
    }

    pub fn channel_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let c = *xs
            .last()
            .ok_or_else(|| Error::shape(format!("channel_sum(node {}): rank-0 input", x.0)))?;
        Ok(self.push(Op::ChannelSum(x), vec![c], None))
    }

    /// Stride-1 convolution with zero 'same' padding; `x (h,w,ci)`,
    /// `k (kh,kw,ci,co)` with odd kernel extents.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let ks = &self.nodes[k.0].shape;
        if xs.len() != 3 || ks.len() != 4 || ks[2] != xs[2] || ks[0] % 2 == 0 || ks[1] % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d(node {}, node {}): input {xs:?} vs kernel {ks:?}",
                x.0, k.0
            )));
        }
        let shape = vec![xs[0], xs[1], ks[3]];
        Ok(self.push(Op::Conv2d { x, k }, shape, None))
    }

    fn conv2d_back_input(&mut self, g: NodeId, k: NodeId) -> NodeId {
        let gs = &self.nodes[g.0].shape;
        let ks = &self.nodes[k.0].shape;
        let shape = vec![gs[0], gs[1], ks[2]];
        self.push(Op::Conv2dBackInput { g, k }, shape, None)
    }

    fn conv2d_back_kernel(&mut self, x: NodeId, g: NodeId, kh: usize, kw: usize) -> NodeId {
        let cin = self.nodes[x.0].shape[2];
        let cout = self.nodes[g.0].shape[2];
        self.push(
            Op::Conv2dBackKernel { x, g, kh, kw },
            vec![kh, kw, cin, cout],
            None,
        )
    }

    /// 2×2 max pooling with stride 2 on `(h,w,c)`, halving spatial dims (floor).
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        if xs.len() != 3 || xs[0] < 2 || xs[1] < 2 {
            return Err(Error::shape(format!(
                "maxpool2(node {}): need (h,w,c) with h,w >= 2, got {xs:?}",
                x.0
            )));
        }
        let shape = vec![xs[0] / 2, xs[1] / 2, xs[2]];
        Ok(self.push(Op::MaxPool2(x), shape, None))
    }

    fn max_unpool2(&mut self, g: NodeId, x: NodeId) -> NodeId {
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::MaxUnpool2 { g, x }, shape, None)
    }

    fn max_select2(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let xs = &self.nodes[x.0].shape;
        let shape = vec![xs[0] / 2, xs[1] / 2, xs[2]];
        self.push(Op::MaxSelect2 { a, x }, shape, None)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = self.nodes[a.0].shape.iter().product();
        let target: usize = shape.iter().product();
        if numel != target {
            return Err(Error::shape(format!(
                "reshape(node {}): {:?} -> {:?} changes element count",
                a.0, self.nodes[a.0].shape, shape
            )));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec(), None))
    }

    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let numel: usize = self.nodes[a.0].shape.iter().product();
        self.reshape(a, &[numel])
    }

    /// Sum of all entries -> scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), vec![], None)
    }

    /// Broadcasts a scalar node to `shape`.
    pub fn broadcast(&mut self, s: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.nodes[s.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::shape(format!(
                "broadcast(node {}): source not scalar, shape {:?}",
                s.0, self.nodes[s.0].shape
            )));
        }
        Ok(self.push(Op::Broadcast(s), shape.to_vec(), None))
    }

    /// Extracts the flat element at `index` -> scalar.
    pub fn index(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let numel: usize = self.nodes[a.0].shape.iter().product();
        if index >= numel {
            return Err(Error::shape(format!(
                "index(node {}): index {index} out of range {numel}",
                a.0
            )));
        }
        Ok(self.push(Op::Index(a, index), vec![], None))
    }

    /// Scalar `s` times the standard basis tensor `e_index` of `shape`.
    pub fn one_hot(&mut self, s: NodeId, index: usize, shape: &[usize]) -> Result<NodeId> {
        if self.nodes[s.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::shape(format!(
                "one_hot(node {}): source not scalar",
                s.0
            )));
        }
        let numel: usize = shape.iter().product();
        if index >= numel {
            return Err(Error::shape(format!(
                "one_hot(node {}): index {index} out of range {numel}",
                s.0
            )));
        }
        Ok(self.push(Op::OneHot { s, index }, shape.to_vec(), None))
    }

    /// log Σ exp over all entries -> scalar.
    pub fn logsumexp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSumExp(a), vec![], None)
    }

    /// Inner product of two same-shape nodes -> scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Squared Euclidean norm -> scalar.
    pub fn norm_sq(&mut self, a: NodeId) -> NodeId {
        let p = self.mul(a, a).expect("same node has same shape");
        self.sum(p)
    }

    /// Adds a channel bias `(c)` to a channels-last tensor `(..., c)`.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        let tiled = self.channel_broadcast(b, &shape)?;
        self.add(x, tiled)
    }

    // -----------------------------------------------------------------
    // Evaluation
    // -----------------------------------------------------------------

    /// Operands whose values are needed to evaluate a node.
    fn operands(op: &Op) -> Vec<NodeId> {
        match *op {
            Op::Var { .. } | Op::Const => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatVec(a, b)
            | Op::TMatVec(a, b)
            | Op::Outer(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::ReluMask(a)
            | Op::LeakyRelu(a, _)
            | Op::LeakyMask(a, _)
            | Op::ChannelBroadcast(a)
            | Op::ChannelSum(a)
            | Op::MaxPool2(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Broadcast(a)
            | Op::Index(a, _)
            | Op::OneHot { s: a, .. }
            | Op::LogSumExp(a) => vec![a],
            Op::Conv2d { x, k } => vec![x, k],
            Op::Conv2dBackInput { g, k } => vec![g, k],
            Op::Conv2dBackKernel { x, g, .. } => vec![x, g],
            Op::MaxUnpool2 { g, x } => vec![g, x],
            Op::MaxSelect2 { a, x } => vec![a, x],
        }
    }

    /// Evaluates the requested output nodes under the given leaf bindings.
    ///
    /// Only ancestors of the requested outputs are computed. Intermediates
    /// are cached for the duration of the call, so shared subgraphs are
    /// evaluated once.
    pub fn eval(&self, outputs: &[NodeId], bindings: &Bindings<'_>) -> Result<Vec<Tensor>> {
        let mut bound: Vec<Option<&Tensor>> = vec![None; self.nodes.len()];
        for (id, value) in &bindings.entries {
            if value.shape() != self.nodes[id.0].shape {
                return Err(Error::shape(format!(
                    "binding for node {}: declared {:?}, bound {:?}",
                    id.0,
                    self.nodes[id.0].shape,
                    value.shape()
                )));
            }
            bound[id.0] = Some(value);
        }

        // Mark ancestors of the requested outputs.
        let mut needed = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = outputs.to_vec();
        while let Some(id) = stack.pop() {
            if needed[id.0] {
                continue;
            }
            needed[id.0] = true;
            stack.extend(Self::operands(&self.nodes[id.0].op));
        }

        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for idx in 0..self.nodes.len() {
            if !needed[idx] {
                continue;
            }
            let value = self.eval_node(idx, &bound, &values)?;
            values[idx] = Some(value);
        }
        Ok(outputs
            .iter()
            .map(|id| values[id.0].clone().expect("requested node evaluated"))
            .collect())
    }

    /// Evaluates a single node (the graph root in the common case).
    pub fn forward_eval(&self, root: NodeId, bindings: &Bindings<'_>) -> Result<Tensor> {
        Ok(self.eval(&[root], bindings)?.pop().expect("one output"))
    }

    fn eval_node(
        &self,
        idx: usize,
        bound: &[Option<&Tensor>],
        values: &[Option<Tensor>],
    ) -> Result<Tensor> {
        let val = |id: NodeId| values[id.0].as_ref().expect("operand evaluated before use");
        let node = &self.nodes[idx];
        let out = match &node.op {
            Op::Var { name } => match bound[idx] {
                Some(v) => v.clone(),
                None => return Err(Error::UnboundLeaf(name.clone())),
            },
            Op::Const => node.value.clone().expect("const node holds a value"),
            Op::Add(a, b) => val(*a).add(val(*b))?,
            Op::Sub(a, b) => val(*a).sub(val(*b))?,
            Op::Mul(a, b) => val(*a).mul(val(*b))?,
            Op::Neg(a) => val(*a).neg(),
            Op::Scale(a, c) => val(*a).scale(*c),
            Op::Exp(a) => val(*a).exp(),
            Op::Relu(a) => val(*a).relu(),
            Op::ReluMask(a) => val(*a).relu_mask(),
            Op::LeakyRelu(a, s) => val(*a).leaky_relu(*s),
            Op::LeakyMask(a, s) => val(*a).leaky_mask(*s),
            Op::MatVec(w, x) => tensor::matvec(val(*w), val(*x)),
            Op::TMatVec(w, y) => tensor::tmatvec(val(*w), val(*y)),
            Op::Outer(a, b) => tensor::outer(val(*a), val(*b)),
            Op::ChannelBroadcast(b) => tensor::channel_broadcast(val(*b), &node.shape),
            Op::ChannelSum(x) => tensor::channel_sum(val(*x)),
            Op::Conv2d { x, k } => tensor::conv2d(val(*x), val(*k)),
            Op::Conv2dBackInput { g, k } => tensor::conv2d_back_input(val(*g), val(*k)),
            Op::Conv2dBackKernel { x, g, kh, kw } => {
                tensor::conv2d_back_kernel(val(*x), val(*g), *kh, *kw)
            }
            Op::MaxPool2(x) => tensor::maxpool2(val(*x)),
            Op::MaxUnpool2 { g, x } => tensor::max_unpool2(val(*g), val(*x)),
            Op::MaxSelect2 { a, x } => tensor::max_select2(val(*a), val(*x)),
            Op::Reshape(a) => val(*a).reshaped(node.shape.clone())?,
            Op::Sum(a) => Tensor::scalar(val(*a).data().iter().sum()),
            Op::Broadcast(s) => Tensor::full(&node.shape, val(*s).item()),
            Op::Index(a, i) => Tensor::scalar(val(*a).data()[*i]),
            Op::OneHot { s, index } => {
                let mut t = Tensor::zeros(&node.shape);
                t.data_mut()[*index] = val(*s).item();
                t
            }
            Op::LogSumExp(a) => Tensor::scalar(tensor::logsumexp(val(*a))),
        };
        debug_assert_eq!(out.shape(), node.shape, "node {idx} shape drifted");
        Ok(out)
    }

    // -----------------------------------------------------------------
    // Differentiation
    // -----------------------------------------------------------------

    /// Operands through which gradient flows. Mask arguments (the `x` of
    /// unpool/select, mask ops themselves) carry zero derivative a.e. and
    /// are excluded.
    fn diff_operands(op: &Op) -> Vec<NodeId> {
        match *op {
            Op::Var { .. } | Op::Const | Op::ReluMask(_) | Op::LeakyMask(_, _) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatVec(a, b)
            | Op::TMatVec(a, b)
            | Op::Outer(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::ChannelBroadcast(a)
            | Op::ChannelSum(a)
            | Op::MaxPool2(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Broadcast(a)
            | Op::Index(a, _)
            | Op::OneHot { s: a, .. }
            | Op::LogSumExp(a) => vec![a],
            Op::Conv2d { x, k } => vec![x, k],
            Op::Conv2dBackInput { g, k } => vec![g, k],
            Op::Conv2dBackKernel { x, g, .. } => vec![x, g],
            Op::MaxUnpool2 { g, .. } => vec![g],
            Op::MaxSelect2 { a, .. } => vec![a],
        }
    }

    /// Appends adjoint nodes for `d root / d wrt[i]` and returns their ids.
    ///
    /// The returned nodes are ordinary graph nodes: evaluate them with
    /// [`Graph::eval`], or build further scalars from them and differentiate
    /// again. A leaf the root does not depend on yields a zero constant.
    pub fn gradients(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if self.nodes[root.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(self.nodes[root.0].shape.clone()));
        }

        // needs[i]: node i can reach a requested leaf through differentiable
        // edges. Node order is topological, so one forward scan suffices.
        let mut needs = vec![false; self.nodes.len()];
        for id in wrt {
            needs[id.0] = true;
        }
        for idx in 0..=root.0 {
            if needs[idx] {
                continue;
            }
            needs[idx] = Self::diff_operands(&self.nodes[idx].op)
                .iter()
                .any(|p| needs[p.0]);
        }

        let mut contribs: Vec<Vec<NodeId>> = vec![Vec::new(); root.0 + 1];
        let root_shape = self.nodes[root.0].shape.clone();
        let seed = self.constant(Tensor::full(&root_shape, 1.0));
        contribs[root.0].push(seed);

        let mut adjoint: Vec<Option<NodeId>> = vec![None; root.0 + 1];
        for idx in (0..=root.0).rev() {
            if contribs[idx].is_empty() || !needs[idx] {
                continue;
            }
            let mut total = contribs[idx][0];
            for extra in &contribs[idx][1..] {
                total = self.add(total, *extra)?;
            }
            adjoint[idx] = Some(total);
            for (parent, grad) in self.vjp(idx, total)? {
                if needs[parent.0] {
                    contribs[parent.0].push(grad);
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for id in wrt {
            match adjoint.get(id.0).copied().flatten() {
                Some(g) => out.push(g),
                None => {
                    let shape = self.nodes[id.0].shape.clone();
                    out.push(self.constant(Tensor::zeros(&shape)));
                }
            }
        }
        Ok(out)
    }

    /// Emits the vector-Jacobian products of node `idx` given its adjoint.
    fn vjp(&mut self, idx: usize, adj: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        let op = self.nodes[idx].op.clone();
        let out = match op {
            Op::Var { .. } | Op::Const | Op::ReluMask(_) | Op::LeakyMask(_, _) => vec![],
            Op::Add(a, b) => vec![(a, adj), (b, adj)],
            Op::Sub(a, b) => {
                let nb = self.neg(adj);
                vec![(a, adj), (b, nb)]
            }
            Op::Mul(a, b) => {
                let ga = self.mul(adj, b)?;
                let gb = self.mul(adj, a)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Neg(a) => vec![(a, self.neg(adj))],
            Op::Scale(a, c) => vec![(a, self.scale(adj, c))],
            Op::Exp(a) => {
                let this = NodeId(idx);
                let g = self.mul(adj, this)?;
                vec![(a, g)]
            }
            Op::Relu(a) => {
                let mask = self.relu_mask(a);
                let g = self.mul(adj, mask)?;
                vec![(a, g)]
            }
            Op::LeakyRelu(a, s) => {
                let mask = self.leaky_mask(a, s);
                let g = self.mul(adj, mask)?;
                vec![(a, g)]
            }
            Op::MatVec(w, x) => {
                let gw = self.outer(adj, x)?;
                let gx = self.tmatvec(w, adj)?;
                vec![(w, gw), (x, gx)]
            }
            Op::TMatVec(w, y) => {
                let gw = self.outer(y, adj)?;
                let gy = self.matvec(w, adj)?;
                vec![(w, gw), (y, gy)]
            }
            Op::Outer(a, b) => {
                let this = NodeId(idx);
                let _ = this;
                let ga = self.matvec(adj, b)?;
                let gb = self.tmatvec(adj, a)?;
                vec![(a, ga), (b, gb)]
            }
            Op::ChannelBroadcast(b) => {
                let g = self.channel_sum(adj)?;
                vec![(b, g)]
            }
            Op::ChannelSum(x) => {
                let shape = self.nodes[x.0].shape.clone();
                let g = self.channel_broadcast(adj, &shape)?;
                vec![(x, g)]
            }
            Op::Conv2d { x, k } => {
                let (kh, kw) = {
                    let ks = &self.nodes[k.0].shape;
                    (ks[0], ks[1])
                };
                let gx = self.conv2d_back_input(adj, k);
                let gk = self.conv2d_back_kernel(x, adj, kh, kw);
                vec![(x, gx), (k, gk)]
            }
            Op::Conv2dBackInput { g, k } => {
                let (kh, kw) = {
                    let ks = &self.nodes[k.0].shape;
                    (ks[0], ks[1])
                };
                let gg = self.conv2d(adj, k)?;
                let gk = self.conv2d_back_kernel(adj, g, kh, kw);
                vec![(g, gg), (k, gk)]
            }
            Op::Conv2dBackKernel { x, g, .. } => {
                let gx = self.conv2d_back_input(g, adj);
                let gg = self.conv2d(x, adj)?;
                vec![(x, gx), (g, gg)]
            }
            Op::MaxPool2(x) => {
                let g = self.max_unpool2(adj, x);
                vec![(x, g)]
            }
            Op::MaxUnpool2 { g, x } => {
                let gg = self.max_select2(adj, x);
                vec![(g, gg)]
            }
            Op::MaxSelect2 { a, x } => {
                let ga = self.max_unpool2(adj, x);
                vec![(a, ga)]
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].shape.clone();
                let g = self.reshape(adj, &shape)?;
                vec![(a, g)]
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].shape.clone();
                let g = self.broadcast(adj, &shape)?;
                vec![(a, g)]
            }
            Op::Broadcast(s) => {
                let g = self.sum(adj);
                vec![(s, g)]
            }
            Op::Index(a, i) => {
                let shape = self.nodes[a.0].shape.clone();
                let g = self.one_hot(adj, i, &shape)?;
                vec![(a, g)]
            }
            Op::OneHot { s, index } => {
                let g = self.index(adj, index)?;
                vec![(s, g)]
            }
            Op::LogSumExp(a) => {
                // d lse / d a = softmax(a) = exp(a - lse), evaluated through
                // graph nodes so it stays differentiable.
                let this = NodeId(idx);
                let shape = self.nodes[a.0].shape.clone();
                let lse_b = self.broadcast(this, &shape)?;
                let centered = self.sub(a, lse_b)?;
                let softmax = self.exp(centered);
                let adj_b = self.broadcast(adj, &shape)?;
                let g = self.mul(adj_b, softmax)?;
                vec![(a, g)]
            }
        };
        Ok(out)
    }

    /// Convenience: appends gradient nodes and evaluates them in one call.
    pub fn grad(
        &mut self,
        root: NodeId,
        wrt: &[NodeId],
        bindings: &Bindings<'_>,
    ) -> Result<Vec<Tensor>> {
        let nodes = self.gradients(root, wrt)?;
        self.eval(&nodes, bindings)
    }
}

/// Compares an analytic gradient against central finite differences of `f`
/// around `x` and returns the worst per-coordinate error.
///
/// The error for coordinate `i` is `|a_i - fd_i| / max(|a_i|, |fd_i|, 1)`:
/// relative for large entries, absolute below magnitude one. The caller is
/// responsible for keeping `x` away from ReLU kinks.
pub fn finite_diff_check<F: Fn(&Tensor) -> f64>(
    f: F,
    analytic_grad: &Tensor,
    x: &Tensor,
    h: f64,
) -> f64 {
    assert_eq!(analytic_grad.numel(), x.numel(), "gradient/input size mismatch");
    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let a = analytic_grad.data()[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}
