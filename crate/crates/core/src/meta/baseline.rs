//! The conventional-training baseline: the same architecture trained as a
//! flat classifier over every training-pool class, then fine-tuned on
//! episodes by swapping in a fresh N-way top layer and running the plain
//! inner update with one shared rate.

use crate::data::ClassPool;
use crate::graph::{append_gradient, evaluate_nodes, Bindings, Graph, NodeId};
use crate::net::{
    build_forward, declare_weight_params, init_weights, LayeredWeights, NetworkSpec,
};
use crate::rng::{self};
use crate::tensor::{Scalar, Tensor};

use super::adam::{adam_update, AdamParams};
use super::state::AdamState;
use super::MetaError;

#[derive(Clone, Debug)]
pub struct BaselineParams {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            iterations: 2000,
            batch_size: 32,
            learning_rate: 0.001,
            adam: AdamParams::default(),
        }
    }
}

/// Rebuilds a specification with a different way count (fresh top layer).
pub fn with_ways(spec: &NetworkSpec, ways: usize) -> NetworkSpec {
    let mut out = spec.clone();
    out.ways = ways;
    if let Some(top) = out.layers.last_mut() {
        top.kind = match top.kind {
            crate::net::LayerKind::Dense { .. } => crate::net::LayerKind::Dense { units: ways },
            other => other,
        };
    }
    out
}

/// Standard mini-batch cross-entropy training over all pool classes.
/// Batches draw class and instance indices uniformly with replacement from
/// `(seed, "baseline-batch", iteration)`.
pub fn train_conventional_baseline<T: Scalar>(
    episode_spec: &NetworkSpec,
    pool: &ClassPool<T>,
    seed: u64,
    params: &BaselineParams,
) -> Result<LayeredWeights<T>, MetaError> {
    let spec = with_ways(episode_spec, pool.class_count());
    let mut weights: LayeredWeights<T> =
        init_weights(&spec, &mut rng::stream(seed, "baseline-init", 0));

    let mut g = Graph::new();
    let nodes = declare_weight_params(&mut g, &spec)?;
    let mut shape = vec![params.batch_size];
    shape.extend(spec.input.instance_shape());
    let x = g.input("x", &shape)?;
    let y = g.input("y", &[params.batch_size])?;
    let fwd = build_forward(&mut g, &spec, &nodes, x, 0)?;
    let loss = g.softmax_cross_entropy(fwd.logits, y)?;
    let targets: Vec<NodeId> = nodes.flat();
    let grads = append_gradient(&mut g, loss, &targets)?;

    let slots: Vec<&Tensor<T>> = weights
        .layers
        .iter()
        .flat_map(|l| l.entries.iter().map(|(_, t)| t))
        .collect();
    let mut opt = AdamState::zeros_like(&slots);

    for iter in 0..params.iterations {
        let mut stream = rng::stream(seed, "baseline-batch", iter);
        let mut instances = Vec::with_capacity(params.batch_size);
        let mut labels = Vec::with_capacity(params.batch_size);
        for _ in 0..params.batch_size {
            let c = stream.random_range(0..pool.classes.len());
            let class = &pool.classes[c];
            let i = stream.random_range(0..class.instances.len());
            instances.push(&class.instances[i]);
            labels.push(T::from_f64(c as f64));
        }
        let mut b = Bindings::new();
        b.set("x", Tensor::stack(&instances));
        b.set("y", Tensor::from_parts(vec![labels.len()], labels));
        crate::net::bind_weights(&mut b, &weights);

        let values = evaluate_nodes(&g, &b, &grads)?;
        opt.step += 1;
        let mut slot = 0usize;
        for layer in weights.layers.iter_mut() {
            for (_, tensor) in layer.entries.iter_mut() {
                adam_update(
                    tensor,
                    &values[slot],
                    &mut opt.m[slot],
                    &mut opt.v[slot],
                    opt.step,
                    params.learning_rate,
                    &params.adam,
                );
                slot += 1;
            }
        }
    }
    Ok(weights)
}

/// Swaps the flat classifier's top layer for a freshly initialized N-way
/// layer, ready for episode fine-tuning with a uniform rate.
pub fn adapt_baseline_head<T: Scalar>(
    flat_weights: &LayeredWeights<T>,
    episode_spec: &NetworkSpec,
    seed: u64,
) -> LayeredWeights<T> {
    let fresh = init_weights::<T>(episode_spec, &mut rng::stream(seed, "baseline-head", 0));
    let mut out = flat_weights.clone();
    let top = out.layers.len() - 1;
    out.layers[top] = fresh.layers[top].clone();
    out
}

use rand::Rng;
