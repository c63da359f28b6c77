//! The replayed (evaluation-path) inner update: host-side weight tensors,
//! one gradient-program evaluation per step.
//!
//! With `freeze_below = b > 0` the bottom `b` layers receive no update and
//! their gradients are never computed; since their weights then stay fixed
//! across steps, their forward features are computed once and reused, which
//! is where the test-time speedup comes from.

use crate::data::Episode;
use crate::graph::{append_gradient, evaluate_nodes, Bindings, Graph, NodeId};
use crate::net::{
    build_blocks, build_forward, declare_weight_params, NetworkSpec,
};
use crate::net::{LayeredWeights, NetError};
use crate::tensor::{Scalar, Tensor};

use super::MetaError;

/// Per-step record of the inner loop: entry 0 is the initial weights;
/// entry t the weights after step t. `support_losses[t]` is the loss at
/// `snapshots[t]`, the value whose gradient drove step t+1.
#[derive(Clone, Debug)]
pub struct InnerTrace<T: Scalar> {
    pub snapshots: Vec<LayeredWeights<T>>,
    pub support_losses: Vec<T>,
}

impl<T: Scalar> InnerTrace<T> {
    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn initial(&self) -> &LayeredWeights<T> {
        &self.snapshots[0]
    }

    pub fn adapted(&self) -> &LayeredWeights<T> {
        self.snapshots.last().expect("trace has the initial entry")
    }
}

/// Reusable adaptation machinery for one episode shape and freeze depth.
/// Graph construction happens here, once; [`Adapter::adapt`] is the part
/// worth timing.
pub struct Adapter<T: Scalar> {
    spec: NetworkSpec,
    ways: usize,
    shots: usize,
    freeze_below: usize,
    /// Frozen bottom layers compiled separately; evaluated once per episode.
    prefix: Option<PrefixGraph>,
    /// Support loss and gradients for the unfrozen layers.
    step: StepGraph,
    _precision: std::marker::PhantomData<T>,
}

struct PrefixGraph {
    graph: Graph,
    features: NodeId,
}

struct StepGraph {
    graph: Graph,
    loss: NodeId,
    /// `(layer index, entry index, gradient node)` for unfrozen tensors.
    grads: Vec<(usize, usize, NodeId)>,
    /// Leaf name the support batch (or cached features) binds to.
    input_name: &'static str,
}

impl<T: Scalar> Adapter<T> {
    pub fn new(
        spec: &NetworkSpec,
        ways: usize,
        shots: usize,
        freeze_below: usize,
    ) -> Result<Self, MetaError> {
        let n = spec.layer_count();
        if freeze_below >= n {
            return Err(MetaError::BadFreeze {
                freeze: freeze_below,
                layers: n,
            });
        }
        let batch = ways * shots;
        if batch < 2 && spec.has_norm_layers() {
            return Err(MetaError::Net(NetError::BatchTooSmallForNorm));
        }

        let mut support_shape = vec![batch];
        support_shape.extend(spec.input.instance_shape());

        let prefix = if freeze_below > 0 {
            let mut g = Graph::new();
            let nodes = declare_weight_params(&mut g, spec)?;
            let input = g.input("support_x", &support_shape)?;
            let features = build_blocks(&mut g, spec, &nodes, input, 0, freeze_below)?;
            Some(PrefixGraph { graph: g, features })
        } else {
            None
        };

        let step = {
            let mut g = Graph::new();
            let nodes = declare_weight_params(&mut g, spec)?;
            let (input_name, input) = match &prefix {
                Some(p) => {
                    let shape = p.graph.shape_of(p.features).to_vec();
                    ("features", g.input("features", &shape)?)
                }
                None => ("support_x", g.input("support_x", &support_shape)?),
            };
            let support_y = g.input("support_y", &[batch])?;
            let fwd = build_forward(&mut g, spec, &nodes, input, freeze_below)?;
            let loss = g.softmax_cross_entropy(fwd.logits, support_y)?;

            let mut targets = Vec::new();
            let mut slots = Vec::new();
            for (li, layer) in nodes.layers.iter().enumerate().skip(freeze_below) {
                for (ei, &(_, id)) in layer.iter().enumerate() {
                    targets.push(id);
                    slots.push((li, ei));
                }
            }
            let grad_nodes = append_gradient(&mut g, loss, &targets)?;
            let grads = slots
                .into_iter()
                .zip(grad_nodes)
                .map(|((li, ei), id)| (li, ei, id))
                .collect();
            StepGraph {
                graph: g,
                loss,
                grads,
                input_name,
            }
        };

        Ok(Adapter {
            spec: spec.clone(),
            ways,
            shots,
            freeze_below,
            prefix,
            step,
            _precision: std::marker::PhantomData,
        })
    }

    pub fn freeze_below(&self) -> usize {
        self.freeze_below
    }

    /// Runs `steps` gradient steps on the episode's support set. Layers
    /// below the freeze depth are returned unchanged, bitwise.
    pub fn adapt(
        &self,
        weights: &LayeredWeights<T>,
        alpha: &[T],
        episode: &Episode<T>,
        steps: usize,
    ) -> Result<(LayeredWeights<T>, InnerTrace<T>), MetaError> {
        if !crate::net::verify_weights(&self.spec, weights) {
            return Err(MetaError::Net(NetError::WeightsMismatch));
        }
        if alpha.len() != self.spec.layer_count() {
            return Err(MetaError::AlphaLength {
                expected: self.spec.layer_count(),
                got: alpha.len(),
            });
        }
        if episode.ways != self.ways || episode.shots != self.shots {
            return Err(MetaError::EpisodeShape {
                ways: episode.ways,
                shots: episode.shots,
            });
        }

        // Frozen features depend only on the frozen weights and the episode.
        let features: Option<Tensor<T>> = match &self.prefix {
            Some(p) => {
                let mut b = Bindings::new();
                b.set("support_x", episode.support_x.clone());
                for (li, layer) in weights.layers.iter().enumerate().take(self.freeze_below) {
                    for (name, t) in &layer.entries {
                        b.set(&NetworkSpec::param_path(li + 1, name), t.clone());
                    }
                }
                Some(
                    evaluate_nodes(&p.graph, &b, &[p.features])?
                        .pop()
                        .expect("feature output"),
                )
            }
            None => None,
        };

        let mut bindings = Bindings::new();
        match &features {
            Some(f) => {
                bindings.set("features", f.clone());
            }
            None => {
                bindings.set("support_x", episode.support_x.clone());
            }
        }
        bindings.set("support_y", Episode::labels_tensor(&episode.support_y));
        debug_assert_eq!(self.step.input_name, if features.is_some() { "features" } else { "support_x" });

        let mut current = weights.clone();
        let mut snapshots = vec![current.clone()];
        let mut support_losses = Vec::with_capacity(steps);
        let mut requests: Vec<NodeId> = vec![self.step.loss];
        requests.extend(self.step.grads.iter().map(|&(_, _, id)| id));

        for _ in 0..steps {
            for (li, layer) in current.layers.iter().enumerate().skip(self.freeze_below) {
                for (name, t) in &layer.entries {
                    bindings.set(&NetworkSpec::param_path(li + 1, name), t.clone());
                }
            }
            let values = evaluate_nodes(&self.step.graph, &bindings, &requests)?;
            support_losses.push(values[0].item());
            for ((li, ei, _), grad) in self.step.grads.iter().zip(&values[1..]) {
                let a = alpha[*li];
                current.layers[*li].entries[*ei].1.add_scaled_assign(grad, -a);
            }
            snapshots.push(current.clone());
        }

        Ok((
            current,
            InnerTrace {
                snapshots,
                support_losses,
            },
        ))
    }
}

/// Mean cross-entropy of the support set at the given weights.
pub fn support_loss<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    episode: &Episode<T>,
) -> Result<T, MetaError> {
    batch_loss(spec, weights, &episode.support_x, &episode.support_y, 0.0)
}

/// Mean cross-entropy of the query set at the (adapted) weights, plus the
/// L1 penalty on those weights when the coefficient is nonzero.
pub fn query_loss<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    episode: &Episode<T>,
    l1_coefficient: f64,
) -> Result<T, MetaError> {
    batch_loss(
        spec,
        weights,
        &episode.query_x,
        &episode.query_y,
        l1_coefficient,
    )
}

fn batch_loss<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    l1_coefficient: f64,
) -> Result<T, MetaError> {
    if !crate::net::verify_weights(spec, weights) {
        return Err(MetaError::Net(NetError::WeightsMismatch));
    }
    let n = batch.shape()[0];
    if n < 2 && spec.has_norm_layers() {
        return Err(MetaError::Net(NetError::BatchTooSmallForNorm));
    }
    let mut g = Graph::new();
    let nodes = declare_weight_params(&mut g, spec)?;
    let mut shape = vec![n];
    shape.extend(spec.input.instance_shape());
    let x = g.input("x", &shape)?;
    let y = g.input("y", &[n])?;
    let fwd = build_forward(&mut g, spec, &nodes, x, 0)?;
    let mut loss = g.softmax_cross_entropy(fwd.logits, y)?;
    if l1_coefficient != 0.0 {
        let mut total: Option<NodeId> = None;
        for layer in &nodes.layers {
            for &(_, id) in layer {
                let term = g.abs_sum(id)?;
                total = Some(match total {
                    None => term,
                    Some(acc) => g.add(acc, term)?,
                });
            }
        }
        let scaled = g.scale(total.expect("parameters exist"), l1_coefficient);
        loss = g.add(loss, scaled)?;
    }

    let mut b = Bindings::new();
    b.set("x", batch.clone());
    b.set("y", Episode::labels_tensor(labels));
    crate::net::bind_weights(&mut b, weights);
    Ok(evaluate_nodes(&g, &b, &[loss])?[0].item())
}

/// One-shot convenience over [`Adapter`], matching the module-level
/// operation signature.
pub fn inner_update<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    alpha: &[T],
    episode: &Episode<T>,
    steps: usize,
    freeze_below: usize,
) -> Result<(LayeredWeights<T>, InnerTrace<T>), MetaError> {
    let adapter = Adapter::new(spec, episode.ways, episode.shots, freeze_below)?;
    adapter.adapt(weights, alpha, episode, steps)
}
