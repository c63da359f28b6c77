//! Construction of the unrolled bilevel graph for one episode: support
//! loss, per-layer gradient steps, query loss at the adapted weights, and
//! the outer gradient of that query loss with respect to the initial
//! weights and the per-layer rates.
//!
//! The graph is built once per trainer and re-evaluated with fresh leaf
//! bindings every episode; episodes only differ in bound data.

use crate::graph::{append_gradient, Graph, GraphError, NodeId};
use crate::net::{build_forward, declare_weight_params, NetworkSpec, WeightNodes};

use super::{EngineMode, TrainParams};

/// How the inner step sizes enter the graph.
enum AlphaNodes {
    /// Differentiable scalar leaves named `alpha/<layer>`.
    Leaves(Vec<NodeId>),
    /// Fixed rates folded in as scale factors (the reference mode the
    /// learned-rate engine must reduce to when alpha training is off).
    Constants(Vec<f64>),
}

pub(crate) struct MetaGraph {
    pub graph: Graph,
    pub query_loss: NodeId,
    /// Support loss at the initial weights (step-0 diagnostics).
    pub initial_support_loss: NodeId,
    /// Outer gradients, parallel to the flattened weight paths.
    pub theta_grads: Vec<(String, NodeId)>,
    /// Outer gradients for alpha, one per layer; empty unless alpha trains.
    pub alpha_grads: Vec<NodeId>,
}

pub(crate) fn alpha_leaf_name(layer_index: usize) -> String {
    format!("alpha/{layer_index}")
}

pub(crate) fn build_meta_graph(
    spec: &NetworkSpec,
    params: &TrainParams,
) -> Result<MetaGraph, GraphError> {
    let mut g = Graph::new();
    let theta = declare_weight_params(&mut g, spec)?;
    let n_layers = spec.layer_count();

    let alpha = match params.mode {
        EngineMode::Lwau => AlphaNodes::Leaves(
            (1..=n_layers)
                .map(|i| g.param(&alpha_leaf_name(i), &[]))
                .collect::<Result<_, _>>()?,
        ),
        EngineMode::Maml => AlphaNodes::Constants(vec![params.alpha_init; n_layers]),
    };

    let instance = spec.input.instance_shape();
    let mut support_shape = vec![params.ways * params.shots];
    support_shape.extend(&instance);
    let mut query_shape = vec![params.ways * params.queries];
    query_shape.extend(&instance);
    let support_x = g.input("support_x", &support_shape)?;
    let support_y = g.input("support_y", &[params.ways * params.shots])?;
    let query_x = g.input("query_x", &query_shape)?;
    let query_y = g.input("query_y", &[params.ways * params.queries])?;

    let mut current = theta.clone();
    let mut initial_support_loss = None;
    for _ in 0..params.inner_steps_train {
        let fwd = build_forward(&mut g, spec, &current, support_x, 0)?;
        let loss = g.softmax_cross_entropy(fwd.logits, support_y)?;
        if initial_support_loss.is_none() {
            initial_support_loss = Some(loss);
        }
        current = gradient_step(&mut g, &current, loss, &alpha, params.second_order)?;
    }
    if initial_support_loss.is_none() {
        // Zero inner steps: still expose the support loss for diagnostics.
        let fwd = build_forward(&mut g, spec, &current, support_x, 0)?;
        initial_support_loss = Some(g.softmax_cross_entropy(fwd.logits, support_y)?);
    }

    let qf = build_forward(&mut g, spec, &current, query_x, 0)?;
    let mut query_loss = g.softmax_cross_entropy(qf.logits, query_y)?;
    if params.l1_coefficient != 0.0 {
        // L1 over the adapted weights, summed in layer order.
        let mut total: Option<NodeId> = None;
        for layer in &current.layers {
            for &(_, node) in layer {
                let term = g.abs_sum(node)?;
                total = Some(match total {
                    None => term,
                    Some(acc) => g.add(acc, term)?,
                });
            }
        }
        let scaled = g.scale(total.expect("network has parameters"), params.l1_coefficient);
        query_loss = g.add(query_loss, scaled)?;
    }

    // Outer gradient targets: every initial weight leaf, then alpha when
    // it participates in training.
    let theta_paths: Vec<String> = theta
        .layers
        .iter()
        .flat_map(|l| l.iter().map(|(p, _)| p.clone()))
        .collect();
    let mut targets = theta.flat();
    if params.trains_alpha() {
        if let AlphaNodes::Leaves(ids) = &alpha {
            targets.extend(ids.iter().copied());
        }
    }
    let grads = append_gradient(&mut g, query_loss, &targets)?;
    let theta_grads = theta_paths
        .into_iter()
        .zip(grads.iter().copied())
        .collect();
    let alpha_grads = if params.trains_alpha() {
        grads[targets.len() - n_layers..].to_vec()
    } else {
        Vec::new()
    };

    Ok(MetaGraph {
        graph: g,
        query_loss,
        initial_support_loss: initial_support_loss.expect("set above"),
        theta_grads,
        alpha_grads,
    })
}

/// One inner gradient step applied to every layer: each tensor of layer i
/// moves by its layer's rate times the support-loss gradient.
fn gradient_step(
    g: &mut Graph,
    current: &WeightNodes,
    loss: NodeId,
    alpha: &AlphaNodes,
    second_order: bool,
) -> Result<WeightNodes, GraphError> {
    let flat = current.flat();
    let mut grads = append_gradient(g, loss, &flat)?;
    if !second_order {
        for grad in grads.iter_mut() {
            *grad = g.stop_grad(*grad);
        }
    }
    let mut grads = grads.into_iter();
    let mut layers = Vec::with_capacity(current.layers.len());
    for (li, layer) in current.layers.iter().enumerate() {
        let mut entries = Vec::with_capacity(layer.len());
        for (path, node) in layer {
            let grad = grads.next().expect("one gradient per target");
            let scaled = match alpha {
                AlphaNodes::Leaves(ids) => {
                    let shape = g.shape_of(grad).to_vec();
                    let a = g.broadcast_scalar(ids[li], &shape)?;
                    g.mul(a, grad)?
                }
                AlphaNodes::Constants(values) => g.scale(grad, values[li]),
            };
            let updated = g.sub(*node, scaled)?;
            entries.push((path.clone(), updated));
        }
        layers.push(entries);
    }
    Ok(WeightNodes { layers })
}
