//! Graph evaluation.
//!
//! Evaluation is a single forward sweep in node order. Only ancestors of the
//! requested outputs are computed, and intermediates are dropped after their
//! last use, so a pruned gradient request (e.g. with bottom layers frozen)
//! does proportionally less work. Every kernel reduces in a fixed order;
//! two evaluations of the same graph with the same bindings are
//! bit-identical.

use std::collections::BTreeMap;

use super::{Graph, GraphError, LeafKind, NodeId, Op};
use crate::tensor::{shape_len, Scalar, Tensor};

/// Values for the graph's leaves, keyed by leaf name.
#[derive(Clone, Debug)]
pub struct Bindings<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for Bindings<T> {
    fn default() -> Self {
        Bindings::new()
    }
}

impl<T: Scalar> Bindings<T> {
    pub fn new() -> Self {
        Bindings {
            map: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> &mut Self {
        self.map.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }
}

/// Evaluates all marked outputs of the graph.
pub fn evaluate<T: Scalar>(
    graph: &Graph,
    bindings: &Bindings<T>,
) -> Result<BTreeMap<String, Tensor<T>>, GraphError> {
    let ids: Vec<NodeId> = graph.outputs().iter().map(|&(_, id)| id).collect();
    let values = evaluate_nodes(graph, bindings, &ids)?;
    Ok(graph
        .outputs()
        .iter()
        .zip(values)
        .map(|((name, _), v)| (name.clone(), v))
        .collect())
}

/// Evaluates a specific set of nodes. The workhorse behind [`evaluate`],
/// gradient evaluation, and the finite-difference oracle.
pub fn evaluate_nodes<T: Scalar>(
    graph: &Graph,
    bindings: &Bindings<T>,
    outputs: &[NodeId],
) -> Result<Vec<Tensor<T>>, GraphError> {
    let needed = graph.ancestors(outputs);

    // Bind check up front so failures name the leaf, not a downstream node.
    for (name, id, _) in graph.leaves() {
        if !needed[id.index()] {
            continue;
        }
        let bound = bindings
            .get(name)
            .ok_or_else(|| GraphError::UnboundLeaf(name.to_string()))?;
        if bound.shape() != graph.shape_of(id) {
            return Err(GraphError::BindingShape {
                name: name.to_string(),
                expected: graph.shape_of(id).to_vec(),
                got: bound.shape().to_vec(),
            });
        }
    }

    // Free each intermediate after its last consumer. Output nodes are
    // pinned for collection at the end.
    let mut last_use = vec![usize::MAX; graph.len()];
    for id in 0..graph.len() {
        if !needed[id] {
            continue;
        }
        last_use[id] = id;
        for input in graph.node(NodeId::from_index(id)).op.inputs().into_iter().flatten() {
            last_use[input.index()] = id;
        }
    }
    for &out in outputs {
        last_use[out.index()] = usize::MAX;
    }

    let mut slots: Vec<Option<Tensor<T>>> = (0..graph.len()).map(|_| None).collect();
    for id in 0..graph.len() {
        if !needed[id] {
            continue;
        }
        let node_id = NodeId::from_index(id);
        let value = compute(graph, node_id, &slots, bindings)?;
        if !value.all_finite() {
            return Err(GraphError::NonFinite {
                op: graph.node(node_id).op.name(),
                node: id,
            });
        }
        slots[id] = Some(value);
        for input in graph.node(node_id).op.inputs().into_iter().flatten() {
            if last_use[input.index()] == id {
                slots[input.index()] = None;
            }
        }
    }

    Ok(outputs
        .iter()
        .map(|out| {
            slots[out.index()]
                .clone()
                .expect("requested output was computed")
        })
        .collect())
}

fn compute<T: Scalar>(
    graph: &Graph,
    id: NodeId,
    slots: &[Option<Tensor<T>>],
    bindings: &Bindings<T>,
) -> Result<Tensor<T>, GraphError> {
    let node = graph.node(id);
    let shape = &node.shape;
    let get = |nid: NodeId| -> &Tensor<T> {
        slots[nid.index()]
            .as_ref()
            .expect("inputs computed before consumers")
    };

    let out = match &node.op {
        Op::Leaf(name, _) => bindings
            .get(name)
            .expect("checked during binding validation")
            .clone(),
        Op::Const(values) => Tensor::from_parts(
            shape.clone(),
            values.iter().map(|&v| T::from_f64(v)).collect(),
        ),
        Op::Add(a, b) => get(*a).zip_map(get(*b), |x, y| x + y),
        Op::Sub(a, b) => get(*a).zip_map(get(*b), |x, y| x - y),
        Op::Mul(a, b) => get(*a).zip_map(get(*b), |x, y| x * y),
        Op::Scale(a, f) => {
            let f = T::from_f64(*f);
            get(*a).map(|x| x * f)
        }
        Op::AddScalar(a, v) => {
            let v = T::from_f64(*v);
            get(*a).map(|x| x + v)
        }
        Op::Exp(a) => get(*a).map(|x| x.exp()),
        Op::Log(a) => get(*a).map(|x| x.ln()),
        Op::Sqrt(a) => get(*a).map(|x| x.sqrt()),
        Op::Recip(a) => get(*a).map(|x| x.recip()),
        Op::Relu(a) => get(*a).map(|x| if x > T::zero() { x } else { T::zero() }),
        Op::StepMask(a) => get(*a).map(|x| if x > T::zero() { T::one() } else { T::zero() }),
        Op::Sign(a) => get(*a).map(|x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }),
        Op::StopGrad(a) => get(*a).clone(),
        Op::MatMul(a, b) => k_matmul(get(*a), get(*b)),
        Op::Transpose(a) => k_transpose(get(*a)),
        Op::Reshape(a) => Tensor::from_parts(shape.clone(), get(*a).data().to_vec()),
        Op::SumAll(a) => {
            let mut acc = T::zero();
            for &v in get(*a).data() {
                acc = acc + v;
            }
            Tensor::scalar(acc)
        }
        Op::BroadcastScalar(a) => Tensor::full(shape, get(*a).item()),
        Op::RowSum(a) => k_row_sum(get(*a)),
        Op::BroadcastCols(a) => k_broadcast_cols(get(*a), shape[1]),
        Op::ColSum(a) => k_col_sum(get(*a)),
        Op::BroadcastRows(a) => k_broadcast_rows(get(*a), shape[0]),
        Op::RowMaxStop(a) => k_row_max(get(*a)),
        Op::ArgmaxOneHotRows(a) => k_argmax_onehot(get(*a)),
        Op::GatherTarget { values, targets } => {
            let v = get(*values);
            let cols = v.shape()[1];
            let idx = target_indices(get(*targets), cols, id)?;
            let data: Vec<T> = idx
                .iter()
                .enumerate()
                .map(|(row, &t)| v.data()[row * cols + t])
                .collect();
            Tensor::from_parts(shape.clone(), data)
        }
        Op::ScatterTarget { grads, targets } => {
            let g = get(*grads);
            let cols = shape[1];
            let idx = target_indices(get(*targets), cols, id)?;
            let mut data = vec![T::zero(); shape_len(shape)];
            for (row, &t) in idx.iter().enumerate() {
                data[row * cols + t] = g.data()[row];
            }
            Tensor::from_parts(shape.clone(), data)
        }
        Op::Im2Col { input, kh, kw } => k_im2col(get(*input), *kh, *kw),
        Op::Col2Im { cols, kh, kw } => k_col2im(get(*cols), shape, *kh, *kw),
        Op::PoolPatches(a) => k_pool_patches(get(*a)),
        Op::PoolScatter(a) => k_pool_scatter(get(*a), shape),
    };
    debug_assert_eq!(out.shape(), shape.as_slice(), "{} shape rule", node.op.name());
    Ok(out)
}

fn target_indices<T: Scalar>(
    targets: &Tensor<T>,
    cols: usize,
    node: NodeId,
) -> Result<Vec<usize>, GraphError> {
    targets
        .data()
        .iter()
        .map(|&v| {
            let f = v.as_f64();
            let rounded = f.round();
            if (f - rounded).abs() > 1e-6 || rounded < 0.0 || rounded >= cols as f64 {
                return Err(GraphError::BadTarget {
                    node: node.index(),
                    cols,
                    value: f,
                });
            }
            Ok(rounded as usize)
        })
        .collect()
}

fn k_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row_out = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let row_b = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in row_out.iter_mut().zip(row_b) {
                *o = *o + aik * bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

fn k_transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

fn k_row_sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let data = a
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut acc = T::zero();
            for &v in row {
                acc = acc + v;
            }
            acc
        })
        .collect();
    Tensor::from_parts(vec![r, 1], data)
}

fn k_col_sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let c = a.shape()[1];
    let mut out = vec![T::zero(); c];
    for row in a.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    Tensor::from_parts(vec![1, c], out)
}

fn k_broadcast_cols<T: Scalar>(a: &Tensor<T>, cols: usize) -> Tensor<T> {
    let r = a.shape()[0];
    let mut out = Vec::with_capacity(r * cols);
    for &v in a.data() {
        out.extend(std::iter::repeat(v).take(cols));
    }
    Tensor::from_parts(vec![r, cols], out)
}

fn k_broadcast_rows<T: Scalar>(a: &Tensor<T>, rows: usize) -> Tensor<T> {
    let c = a.shape()[1];
    let mut out = Vec::with_capacity(rows * c);
    for _ in 0..rows {
        out.extend_from_slice(a.data());
    }
    Tensor::from_parts(vec![rows, c], out)
}

fn k_row_max<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let data = a
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = row[0];
            for &v in &row[1..] {
                if v > best {
                    best = v;
                }
            }
            best
        })
        .collect();
    Tensor::from_parts(vec![r, 1], data)
}

fn k_argmax_onehot<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![T::zero(); r * c];
    for (i, row) in a.data().chunks_exact(c).enumerate() {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            // Strict comparison keeps the first maximum on ties.
            if v > row[best] {
                best = j;
            }
        }
        out[i * c + best] = T::one();
    }
    Tensor::from_parts(vec![r, c], out)
}

fn k_im2col<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize) -> Tensor<T> {
    let (b, h, w, c) = image_dims(x.shape());
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = kh * kw * c;
    let xd = x.data();
    let mut out = vec![T::zero(); b * h * w * cols];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let row_base = ((bi * h + i) * w + j) * cols;
                for di in 0..kh {
                    let si = (i + di) as isize - ph as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let sj = (j + dj) as isize - pw as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + si as usize) * w + sj as usize) * c;
                        let dst = row_base + (di * kw + dj) * c;
                        out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![b * h * w, cols], out)
}

fn k_col2im<T: Scalar>(cols: &Tensor<T>, image_shape: &[usize], kh: usize, kw: usize) -> Tensor<T> {
    let (b, h, w, c) = image_dims(image_shape);
    let (ph, pw) = (kh / 2, kw / 2);
    let ncols = kh * kw * c;
    let cd = cols.data();
    let mut out = vec![T::zero(); b * h * w * c];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let row_base = ((bi * h + i) * w + j) * ncols;
                for di in 0..kh {
                    let si = (i + di) as isize - ph as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let sj = (j + dj) as isize - pw as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let dst = ((bi * h + si as usize) * w + sj as usize) * c;
                        let src = row_base + (di * kw + dj) * c;
                        for ch in 0..c {
                            out[dst + ch] = out[dst + ch] + cd[src + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(image_shape.to_vec(), out)
}

fn k_pool_patches<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, h, w, c) = image_dims(x.shape());
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![T::zero(); b * ho * wo * c * 4];
    for bi in 0..b {
        for oi in 0..ho {
            for oj in 0..wo {
                for ch in 0..c {
                    let row = ((bi * ho + oi) * wo + oj) * c + ch;
                    for k in 0..4 {
                        let (di, dj) = (k / 2, k % 2);
                        let src = ((bi * h + 2 * oi + di) * w + 2 * oj + dj) * c + ch;
                        out[row * 4 + k] = xd[src];
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![b * ho * wo * c, 4], out)
}

fn k_pool_scatter<T: Scalar>(patches: &Tensor<T>, image_shape: &[usize]) -> Tensor<T> {
    let (b, h, w, c) = image_dims(image_shape);
    let (ho, wo) = (h / 2, w / 2);
    let pd = patches.data();
    let mut out = vec![T::zero(); b * h * w * c];
    for bi in 0..b {
        for oi in 0..ho {
            for oj in 0..wo {
                for ch in 0..c {
                    let row = ((bi * ho + oi) * wo + oj) * c + ch;
                    for k in 0..4 {
                        let (di, dj) = (k / 2, k % 2);
                        let dst = ((bi * h + 2 * oi + di) * w + 2 * oj + dj) * c + ch;
                        out[dst] = pd[row * 4 + k];
                    }
                }
            }
        }
    }
    Tensor::from_parts(image_shape.to_vec(), out)
}

fn image_dims(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

/// True when the leaf is a parameter, for gradient target validation.
pub(crate) fn is_param(graph: &Graph, id: NodeId) -> bool {
    graph.leaf_kind(id) == Some(LeafKind::Param)
}
