//! Reverse-mode differentiation as a graph transformation.
//!
//! [`append_gradient`] extends a graph with adjoint nodes computing
//! d(loss)/d(target) for each requested node. Because every adjoint is built
//! from the same primitive set, the extended graph can be differentiated
//! again; that closure property is what delivers exact second-order
//! meta-gradients through unrolled inner updates.
//!
//! Adjoints are only materialized for nodes that lie on a path from a target
//! to the loss, so differentiating with respect to a subset of parameters
//! (e.g. with bottom layers frozen) emits proportionally fewer nodes.

use std::collections::BTreeMap;

use super::eval::{evaluate_nodes, is_param, Bindings};
use super::{Graph, GraphError, NodeId, Op};
use crate::tensor::{Scalar, Tensor};

/// Gradients keyed by parameter-leaf name; shapes match their parameters.
pub type GradientSet<T> = BTreeMap<String, Tensor<T>>;

/// Appends adjoint nodes for d(loss)/d(target) and returns one node per
/// target, in target order. Targets may be leaves or interior nodes.
/// Targets that cannot influence the loss get a zero-constant gradient.
pub fn append_gradient(
    graph: &mut Graph,
    loss: NodeId,
    targets: &[NodeId],
) -> Result<Vec<NodeId>, GraphError> {
    if !graph.shape_of(loss).is_empty() {
        return Err(GraphError::NonScalarLoss(graph.shape_of(loss).to_vec()));
    }

    let original_len = graph.len();
    let upstream = graph.ancestors(&[loss]);
    let downstream = graph.descendants(targets);
    let relevant: Vec<bool> = (0..original_len)
        .map(|i| upstream[i] && downstream[i])
        .collect();

    // adjoint[i] = node computing d(loss)/d(node i), built lazily.
    let mut adjoint: Vec<Option<NodeId>> = vec![None; original_len];
    if relevant[loss.index()] {
        adjoint[loss.index()] = Some(graph.scalar_const(1.0));
    }

    for id in (0..=loss.index()).rev() {
        if !relevant[id] {
            continue;
        }
        let Some(adj) = adjoint[id] else {
            // On a structural path, but every consumer had zero derivative.
            continue;
        };
        let node_id = NodeId::from_index(id);
        let op = graph.node(node_id).op.clone();
        for (input, contribution) in expand_adjoint(graph, node_id, &op, adj)? {
            if !relevant[input.index()] {
                continue;
            }
            adjoint[input.index()] = Some(match adjoint[input.index()] {
                None => contribution,
                Some(existing) => graph.add(existing, contribution)?,
            });
        }
    }

    let mut out = Vec::with_capacity(targets.len());
    for &t in targets {
        match adjoint[t.index()] {
            Some(node) => out.push(node),
            None => {
                let shape = graph.shape_of(t).to_vec();
                out.push(graph.zero_const(&shape));
            }
        }
    }
    Ok(out)
}

/// Adjoint contributions of one node to its inputs. Inputs with zero
/// derivative (masks, targets, stop-gradients) are simply omitted.
fn expand_adjoint(
    g: &mut Graph,
    node: NodeId,
    op: &Op,
    adj: NodeId,
) -> Result<Vec<(NodeId, NodeId)>, GraphError> {
    use Op::*;
    let contributions = match *op {
        Leaf(..) | Const(_) => vec![],
        Add(a, b) => vec![(a, adj), (b, adj)],
        Sub(a, b) => {
            let neg = g.scale(adj, -1.0);
            vec![(a, adj), (b, neg)]
        }
        Mul(a, b) => {
            let da = g.mul(adj, b)?;
            let db = g.mul(adj, a)?;
            vec![(a, da), (b, db)]
        }
        Scale(a, f) => vec![(a, g.scale(adj, f))],
        AddScalar(a, _) => vec![(a, adj)],
        Exp(a) => vec![(a, g.mul(adj, node)?)],
        Log(a) => {
            let inv = g.recip(a);
            vec![(a, g.mul(adj, inv)?)]
        }
        Sqrt(a) => {
            // d sqrt(x) = 0.5 / sqrt(x)
            let inv = g.recip(node);
            let half = g.scale(inv, 0.5);
            vec![(a, g.mul(adj, half)?)]
        }
        Recip(a) => {
            // d (1/x) = -(1/x)^2
            let sq = g.mul(node, node)?;
            let prod = g.mul(adj, sq)?;
            vec![(a, g.scale(prod, -1.0))]
        }
        Relu(a) => {
            let mask = g.step_mask(a);
            vec![(a, g.mul(adj, mask)?)]
        }
        StepMask(_) | Sign(_) | StopGrad(_) | RowMaxStop(_) | ArgmaxOneHotRows(_) => vec![],
        MatMul(a, b) => {
            let bt = g.transpose(b)?;
            let da = g.matmul(adj, bt)?;
            let at = g.transpose(a)?;
            let db = g.matmul(at, adj)?;
            vec![(a, da), (b, db)]
        }
        Transpose(a) => vec![(a, g.transpose(adj)?)],
        Reshape(a) => {
            let shape = g.shape_of(a).to_vec();
            vec![(a, g.reshape(adj, &shape)?)]
        }
        SumAll(a) => {
            let shape = g.shape_of(a).to_vec();
            vec![(a, g.broadcast_scalar(adj, &shape)?)]
        }
        BroadcastScalar(a) => vec![(a, g.sum_all(adj))],
        RowSum(a) => {
            let cols = g.shape_of(a)[1];
            vec![(a, g.broadcast_cols(adj, cols)?)]
        }
        BroadcastCols(a) => vec![(a, g.row_sum(adj)?)],
        ColSum(a) => {
            let rows = g.shape_of(a)[0];
            vec![(a, g.broadcast_rows(adj, rows)?)]
        }
        BroadcastRows(a) => vec![(a, g.col_sum(adj)?)],
        GatherTarget { values, targets } => {
            let cols = g.shape_of(values)[1];
            vec![(values, g.scatter_target(adj, targets, cols)?)]
        }
        ScatterTarget { grads, targets } => vec![(grads, g.gather_target(adj, targets)?)],
        Im2Col { input, kh, kw } => {
            let shape = g.shape_of(input).to_vec();
            vec![(input, g.col2im(adj, &shape, kh, kw)?)]
        }
        Col2Im { cols, kh, kw } => vec![(cols, g.im2col(adj, kh, kw)?)],
        PoolPatches(a) => {
            let shape = g.shape_of(a).to_vec();
            vec![(a, g.pool_scatter(adj, &shape)?)]
        }
        PoolScatter(a) => vec![(a, g.pool_patches(adj)?)],
    };
    Ok(contributions)
}

/// Evaluates d(loss)/d(leaf) for a set of parameter leaves.
///
/// This is the user-facing gradient operation: it refuses non-parameter
/// targets, leaves the input graph untouched, and returns gradients keyed by
/// leaf name with shapes matching their parameters.
pub fn gradient<T: Scalar>(
    graph: &Graph,
    loss_output: &str,
    wrt: &[&str],
    bindings: &Bindings<T>,
) -> Result<GradientSet<T>, GraphError> {
    let loss = graph.output(loss_output)?;
    let mut extended = graph.clone();
    let mut targets = Vec::with_capacity(wrt.len());
    for name in wrt {
        let id = extended
            .leaf(name)
            .ok_or_else(|| GraphError::NoSuchLeaf(name.to_string()))?;
        if !is_param(&extended, id) {
            return Err(GraphError::NotAParam(name.to_string()));
        }
        targets.push(id);
    }
    let grad_nodes = append_gradient(&mut extended, loss, &targets)?;
    let values = evaluate_nodes(&extended, bindings, &grad_nodes)?;
    Ok(wrt
        .iter()
        .map(|name| name.to_string())
        .zip(values)
        .collect())
}
