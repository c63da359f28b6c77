//! Differentiable programs over dense tensors.
//!
//! A [`Graph`] is an append-only DAG of primitive operations with named
//! parameter and input leaves. Shape checking happens at build time, so a
//! node id is proof of a well-formed subgraph. Reverse-mode differentiation
//! ([`append_gradient`]) emits adjoint computations *as graph nodes* built
//! from the same primitive set, which is what makes gradients of gradients
//! (and therefore exact meta-gradients through unrolled inner updates)
//! available without any special casing.
//!
//! The primitive set is deliberately small and closed under adjoints; the
//! familiar network operations (convolution, max pooling, batch norm,
//! softmax cross-entropy) are composed from it in [`composite`].

mod autodiff;
mod composite;
mod eval;
mod fd;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

pub use autodiff::{append_gradient, gradient, GradientSet};
pub use composite::NORM_EPS;
pub use eval::{evaluate, evaluate_nodes, Bindings};
pub use fd::{
    compare_gradients, finite_difference_oracle, GradCheckSummary, DEFAULT_FD_STEP,
};

/// Index of a node within its graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub(crate) fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(index: usize) -> NodeId {
        NodeId(index as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Trainable parameter; a legal gradient target.
    Param,
    /// Data fed at evaluation time; never differentiated against.
    Input,
}

/// Primitive operations. Attributes that describe the *output* (reshape
/// targets, broadcast extents, scatter geometry) live in the node's stored
/// shape rather than in the variant.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf(String, LeafKind),
    Const(Arc<Vec<f64>>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Relu(NodeId),
    /// 1 where the input is > 0, else 0. Zero derivative.
    StepMask(NodeId),
    /// -1 / 0 / +1. Zero derivative.
    Sign(NodeId),
    /// Identity forward, blocks gradient flow.
    StopGrad(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    SumAll(NodeId),
    BroadcastScalar(NodeId),
    RowSum(NodeId),
    BroadcastCols(NodeId),
    ColSum(NodeId),
    BroadcastRows(NodeId),
    /// Per-row maximum, treated as a constant by differentiation. Used for
    /// the shift-invariant log-sum-exp, where any constant shift cancels.
    RowMaxStop(NodeId),
    /// Per-row one-hot of the first maximum. Zero derivative.
    ArgmaxOneHotRows(NodeId),
    /// out[i, 0] = values[i, targets[i]]; targets carry integer labels.
    GatherTarget { values: NodeId, targets: NodeId },
    /// Transpose of the gather: out[i, targets[i]] = grads[i, 0].
    ScatterTarget { grads: NodeId, targets: NodeId },
    /// Same-padded patch extraction: [b,h,w,c] -> [b*h*w, kh*kw*c].
    Im2Col { input: NodeId, kh: usize, kw: usize },
    /// Transpose of Im2Col (scatter-add back into the image).
    Col2Im { cols: NodeId, kh: usize, kw: usize },
    /// Disjoint 2x2/stride-2 windows: [b,h,w,c] -> [b*(h/2)*(w/2)*c, 4].
    /// Odd trailing rows/columns are dropped.
    PoolPatches(NodeId),
    /// Transpose of PoolPatches; dropped cells receive zero.
    PoolScatter(NodeId),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf(..) => "leaf",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::Relu(_) => "relu",
            Op::StepMask(_) => "step_mask",
            Op::Sign(_) => "sign",
            Op::StopGrad(_) => "stop_grad",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::SumAll(_) => "sum_all",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::RowSum(_) => "row_sum",
            Op::BroadcastCols(_) => "broadcast_cols",
            Op::ColSum(_) => "col_sum",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::RowMaxStop(_) => "row_max_stop",
            Op::ArgmaxOneHotRows(_) => "argmax_onehot_rows",
            Op::GatherTarget { .. } => "gather_target",
            Op::ScatterTarget { .. } => "scatter_target",
            Op::Im2Col { .. } => "im2col",
            Op::Col2Im { .. } => "col2im",
            Op::PoolPatches(_) => "pool_patches",
            Op::PoolScatter(_) => "pool_scatter",
        }
    }

    /// Data-flow inputs (at most two for every primitive).
    pub(crate) fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf(..) | Const(_) => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            GatherTarget { values, targets } => [Some(values), Some(targets)],
            ScatterTarget { grads, targets } => [Some(grads), Some(targets)],
            Scale(a, _) | AddScalar(a, _) => [Some(a), None],
            Exp(a) | Log(a) | Sqrt(a) | Recip(a) | Relu(a) | StepMask(a) | Sign(a)
            | StopGrad(a) | Transpose(a) | Reshape(a) | SumAll(a) | BroadcastScalar(a)
            | RowSum(a) | BroadcastCols(a) | ColSum(a) | BroadcastRows(a) | RowMaxStop(a)
            | ArgmaxOneHotRows(a) | PoolPatches(a) | PoolScatter(a) => [Some(a), None],
            Im2Col { input, .. } => [Some(input), None],
            Col2Im { cols, .. } => [Some(cols), None],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op} at node {node}: {detail}")]
    Shape {
        op: &'static str,
        node: usize,
        detail: String,
    },
    #[error("duplicate leaf name {0:?}")]
    DuplicateLeaf(String),
    #[error("duplicate output name {0:?}")]
    DuplicateOutput(String),
    #[error("no output named {0:?}")]
    NoSuchOutput(String),
    #[error("no leaf named {0:?}")]
    NoSuchLeaf(String),
    #[error("gradient target {0:?} is not a parameter leaf")]
    NotAParam(String),
    #[error("loss must be scalar-shaped, got {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("leaf {0:?} is unbound")]
    UnboundLeaf(String),
    #[error("binding for leaf {name:?} has shape {got:?}, expected {expected:?}")]
    BindingShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite values produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("target at node {node} must be an integer in [0, {cols}), found {value}")]
    BadTarget {
        node: usize,
        cols: usize,
        value: f64,
    },
}

type Build = Result<NodeId, GraphError>;

/// An append-only program DAG. Immutable once handed to evaluation; the
/// evaluator and the differentiator never mutate shared state, so a graph
/// can be evaluated from many threads at once.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: BTreeMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
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

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.index()].shape
    }

    pub(crate) fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.node(id).op {
            Op::Leaf(_, kind) => Some(kind),
            _ => None,
        }
    }

    /// Names of all declared leaves with their kinds, in name order.
    pub fn leaves(&self) -> impl Iterator<Item = (&str, NodeId, LeafKind)> {
        self.leaves.iter().map(|(name, &id)| {
            let kind = match self.node(id).op {
                Op::Leaf(_, kind) => kind,
                _ => unreachable!("leaf map points at non-leaf"),
            };
            (name.as_str(), id, kind)
        })
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) -> Result<(), GraphError> {
        if self.outputs.iter().any(|(n, _)| n == name) {
            return Err(GraphError::DuplicateOutput(name.to_string()));
        }
        self.outputs.push((name.to_string(), id));
        Ok(())
    }

    pub fn output(&self, name: &str) -> Result<NodeId, GraphError> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .ok_or_else(|| GraphError::NoSuchOutput(name.to_string()))
    }

    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, shape });
        id
    }

    fn err(&self, op: &'static str, detail: String) -> GraphError {
        GraphError::Shape {
            op,
            node: self.nodes.len(),
            detail,
        }
    }

    // ---- leaves and constants -------------------------------------------

    pub fn param(&mut self, name: &str, shape: &[usize]) -> Build {
        self.add_leaf(name, shape, LeafKind::Param)
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Build {
        self.add_leaf(name, shape, LeafKind::Input)
    }

    fn add_leaf(&mut self, name: &str, shape: &[usize], kind: LeafKind) -> Build {
        if self.leaves.contains_key(name) {
            return Err(GraphError::DuplicateLeaf(name.to_string()));
        }
        let id = self.push(Op::Leaf(name.to_string(), kind), shape.to_vec());
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Build {
        if crate::tensor::shape_len(shape) != values.len() {
            return Err(self.err(
                "const",
                format!("{} values for shape {:?}", values.len(), shape),
            ));
        }
        Ok(self.push(Op::Const(Arc::new(values)), shape.to_vec()))
    }

    pub fn scalar_const(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(Arc::new(vec![value])), Vec::new())
    }

    pub fn zero_const(&mut self, shape: &[usize]) -> NodeId {
        let n = crate::tensor::shape_len(shape);
        self.push(Op::Const(Arc::new(vec![0.0; n])), shape.to_vec())
    }

    // ---- elementwise ------------------------------------------------------

    fn same_shape(&mut self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>, GraphError> {
        let sa = self.shape_of(a);
        let sb = self.shape_of(b);
        if sa != sb {
            let detail = format!("operand shapes differ: {sa:?} vs {sb:?}");
            return Err(self.err(op, detail));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Build {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Build {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Build {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Scale(a, factor), shape)
    }

    pub fn add_scalar(&mut self, a: NodeId, value: f64) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::AddScalar(a, value), shape)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Exp(a), shape)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Log(a), shape)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Sqrt(a), shape)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Recip(a), shape)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Relu(a), shape)
    }

    pub fn step_mask(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::StepMask(a), shape)
    }

    pub fn sign(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Sign(a), shape)
    }

    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape_of(a).to_vec();
        self.push(Op::StopGrad(a), shape)
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Build {
        let sa = self.shape_of(a).to_vec();
        let sb = self.shape_of(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.err("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        Ok(self.push(Op::MatMul(a, b), vec![sa[0], sb[1]]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Build {
        let s = self.shape_of(a).to_vec();
        if s.len() != 2 {
            return Err(self.err("transpose", format!("expects a matrix, got {s:?}")));
        }
        Ok(self.push(Op::Transpose(a), vec![s[1], s[0]]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Build {
        let len = crate::tensor::shape_len(self.shape_of(a));
        if crate::tensor::shape_len(shape) != len {
            return Err(self.err("reshape", format!("{len} elements into {shape:?}")));
        }
        Ok(self.push(Op::Reshape(a), shape.to_vec()))
    }

    // ---- reductions and broadcasts ---------------------------------------

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumAll(a), Vec::new())
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> Build {
        if !self.shape_of(a).is_empty() {
            let detail = format!("source must be scalar, got {:?}", self.shape_of(a));
            return Err(self.err("broadcast_scalar", detail));
        }
        Ok(self.push(Op::BroadcastScalar(a), shape.to_vec()))
    }

    fn expect_matrix(&mut self, op: &'static str, a: NodeId) -> Result<(usize, usize), GraphError> {
        let s = self.shape_of(a);
        if s.len() != 2 {
            let detail = format!("expects a matrix, got {s:?}");
            return Err(self.err(op, detail));
        }
        Ok((s[0], s[1]))
    }

    pub fn row_sum(&mut self, a: NodeId) -> Build {
        let (r, _) = self.expect_matrix("row_sum", a)?;
        Ok(self.push(Op::RowSum(a), vec![r, 1]))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Build {
        let (r, c) = self.expect_matrix("broadcast_cols", a)?;
        if c != 1 {
            return Err(self.err("broadcast_cols", format!("expects [r,1], got [{r},{c}]")));
        }
        Ok(self.push(Op::BroadcastCols(a), vec![r, cols]))
    }

    pub fn col_sum(&mut self, a: NodeId) -> Build {
        let (_, c) = self.expect_matrix("col_sum", a)?;
        Ok(self.push(Op::ColSum(a), vec![1, c]))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Build {
        let (r, c) = self.expect_matrix("broadcast_rows", a)?;
        if r != 1 {
            return Err(self.err("broadcast_rows", format!("expects [1,c], got [{r},{c}]")));
        }
        Ok(self.push(Op::BroadcastRows(a), vec![rows, c]))
    }

    pub fn row_max_stop(&mut self, a: NodeId) -> Build {
        let (r, _) = self.expect_matrix("row_max_stop", a)?;
        Ok(self.push(Op::RowMaxStop(a), vec![r, 1]))
    }

    pub fn argmax_onehot_rows(&mut self, a: NodeId) -> Build {
        let (r, c) = self.expect_matrix("argmax_onehot_rows", a)?;
        Ok(self.push(Op::ArgmaxOneHotRows(a), vec![r, c]))
    }

    // ---- label gather/scatter ---------------------------------------------

    pub fn gather_target(&mut self, values: NodeId, targets: NodeId) -> Build {
        let (r, _) = self.expect_matrix("gather_target", values)?;
        let st = self.shape_of(targets);
        if st != [r] {
            let detail = format!("targets must have shape [{r}], got {st:?}");
            return Err(self.err("gather_target", detail));
        }
        Ok(self.push(Op::GatherTarget { values, targets }, vec![r, 1]))
    }

    pub fn scatter_target(&mut self, grads: NodeId, targets: NodeId, cols: usize) -> Build {
        let (r, c) = self.expect_matrix("scatter_target", grads)?;
        if c != 1 {
            return Err(self.err("scatter_target", format!("expects [r,1], got [{r},{c}]")));
        }
        let st = self.shape_of(targets);
        if st != [r] {
            let detail = format!("targets must have shape [{r}], got {st:?}");
            return Err(self.err("scatter_target", detail));
        }
        Ok(self.push(Op::ScatterTarget { grads, targets }, vec![r, cols]))
    }

    // ---- image patch extraction -------------------------------------------

    fn expect_image(&mut self, op: &'static str, a: NodeId) -> Result<[usize; 4], GraphError> {
        let s = self.shape_of(a);
        if s.len() != 4 {
            let detail = format!("expects [batch, height, width, channels], got {s:?}");
            return Err(self.err(op, detail));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    pub fn im2col(&mut self, input: NodeId, kh: usize, kw: usize) -> Build {
        let [b, h, w, c] = self.expect_image("im2col", input)?;
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(self.err("im2col", format!("kernel {kh}x{kw} must be odd-sized")));
        }
        Ok(self.push(Op::Im2Col { input, kh, kw }, vec![b * h * w, kh * kw * c]))
    }

    pub fn col2im(&mut self, cols: NodeId, image_shape: &[usize], kh: usize, kw: usize) -> Build {
        let s = self.shape_of(cols).to_vec();
        if image_shape.len() != 4 {
            return Err(self.err("col2im", format!("image shape {image_shape:?} not rank 4")));
        }
        let (b, h, w, c) = (image_shape[0], image_shape[1], image_shape[2], image_shape[3]);
        if s != [b * h * w, kh * kw * c] {
            let detail = format!("columns {s:?} do not match image {image_shape:?} with kernel {kh}x{kw}");
            return Err(self.err("col2im", detail));
        }
        Ok(self.push(Op::Col2Im { cols, kh, kw }, image_shape.to_vec()))
    }

    pub fn pool_patches(&mut self, input: NodeId) -> Build {
        let [b, h, w, c] = self.expect_image("pool_patches", input)?;
        if h < 2 || w < 2 {
            return Err(self.err("pool_patches", format!("spatial extent {h}x{w} below 2x2")));
        }
        Ok(self.push(Op::PoolPatches(input), vec![b * (h / 2) * (w / 2) * c, 4]))
    }

    pub fn pool_scatter(&mut self, patches: NodeId, image_shape: &[usize]) -> Build {
        let s = self.shape_of(patches).to_vec();
        if image_shape.len() != 4 {
            return Err(self.err("pool_scatter", format!("image shape {image_shape:?} not rank 4")));
        }
        let (b, h, w, c) = (image_shape[0], image_shape[1], image_shape[2], image_shape[3]);
        if s != [b * (h / 2) * (w / 2) * c, 4] {
            let detail = format!("patches {s:?} do not match image {image_shape:?}");
            return Err(self.err("pool_scatter", detail));
        }
        Ok(self.push(Op::PoolScatter(patches), image_shape.to_vec()))
    }

    // ---- traversal helpers --------------------------------------------------

    /// Marks every node some requested node depends on (inclusive).
    pub(crate) fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for &r in roots {
            mark[r.index()] = true;
        }
        for id in (0..self.nodes.len()).rev() {
            if !mark[id] {
                continue;
            }
            for input in self.nodes[id].op.inputs().into_iter().flatten() {
                mark[input.index()] = true;
            }
        }
        mark
    }

    /// Marks every node reachable *from* any of the given nodes (inclusive).
    pub(crate) fn descendants(&self, sources: &[NodeId]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for &s in sources {
            mark[s.index()] = true;
        }
        for id in 0..self.nodes.len() {
            if mark[id] {
                continue;
            }
            let reached = self.nodes[id]
                .op
                .inputs()
                .into_iter()
                .flatten()
                .any(|input| mark[input.index()]);
            if reached {
                mark[id] = true;
            }
        }
        mark
    }
}
