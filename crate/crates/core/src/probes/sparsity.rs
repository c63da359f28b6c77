//! Representation sparsity: the fraction of active (strictly positive)
//! entries in the flattened pre-classifier representation, plus the map
//! geometry used to export representations as images.

use crate::data::{sample_episode, ClassPool};
use crate::graph::{evaluate_nodes, Bindings, Graph, NodeId};
use crate::meta::{Adapter, MetaError};
use crate::net::{build_forward, declare_weight_params, LayeredWeights, NetworkSpec};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

use super::proportion::ProbeTask;
use super::ProbeError;

#[derive(Clone, Debug)]
pub struct SparsityReport {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub repr_len: usize,
    /// Export geometry: the factor pair of `repr_len` nearest a 1:2 aspect.
    pub rows: usize,
    pub cols: usize,
}

/// Activation percentage of a `[batch, length]` stack of post-ReLU
/// representations. Entries are active iff strictly positive (ReLU emits
/// exact zeros); any negative entry means the input is not a post-ReLU
/// representation and is rejected.
pub fn activation_percentage<T: Scalar>(
    representations: &Tensor<T>,
) -> Result<SparsityReport, ProbeError> {
    if representations.rank() != 2 {
        return Err(ProbeError::BadShape(representations.shape().to_vec()));
    }
    let len = representations.shape()[1];
    let mut per_image = Vec::with_capacity(representations.shape()[0]);
    for row in representations.data().chunks_exact(len.max(1)) {
        let mut active = 0usize;
        for &v in row {
            if v < T::zero() {
                return Err(ProbeError::NegativeEntry(v.as_f64()));
            }
            active += usize::from(v > T::zero());
        }
        per_image.push(active as f64 / len.max(1) as f64);
    }
    let mean = if per_image.is_empty() {
        0.0
    } else {
        per_image.iter().sum::<f64>() / per_image.len() as f64
    };
    let (rows, cols) = map_geometry(len);
    Ok(SparsityReport {
        per_image,
        mean,
        repr_len: len,
        rows,
        cols,
    })
}

/// The factor pair `rows x cols = len` with `rows <= cols` whose aspect is
/// nearest 1:2; ties prefer more rows. 800 maps to 20x40.
pub fn map_geometry(len: usize) -> (usize, usize) {
    if len == 0 {
        return (0, 0);
    }
    let mut best = (1, len);
    let mut best_score = f64::INFINITY;
    let mut r = 1;
    while r * r <= len {
        if len % r == 0 {
            let c = len / r;
            let score = (c as f64 / r as f64 - 2.0).abs();
            if score < best_score || (score == best_score && r > best.0) {
                best = (r, c);
                best_score = score;
            }
        }
        r += 1;
    }
    best
}

/// Post-adaptation query representations over freshly sampled episodes,
/// stacked into one `[episodes * queries * ways, repr_len]` tensor.
/// Episode streams match the other probes' `(seed, "probe-episode", i)`
/// derivation for paired comparisons.
#[allow(clippy::too_many_arguments)]
pub fn representation_probe<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    alpha: &[T],
    pool: &ClassPool<T>,
    task: ProbeTask,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<Tensor<T>, ProbeError> {
    let adapter: Adapter<T> = Adapter::new(spec, task.ways, task.shots, 0)?;
    let mut g = Graph::new();
    let nodes = declare_weight_params(&mut g, spec).map_err(MetaError::from)?;
    let mut shape = vec![task.ways * task.queries];
    shape.extend(spec.input.instance_shape());
    let x = g.input("query_x", &shape).map_err(MetaError::from)?;
    let fwd = build_forward(&mut g, spec, &nodes, x, 0).map_err(MetaError::from)?;
    let repr: NodeId = fwd.representation;

    let mut collected: Vec<Tensor<T>> = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut stream = rng::stream(seed, "probe-episode", i as u64);
        let episode = sample_episode(pool, task.ways, task.shots, task.queries, &mut stream)
            .map_err(MetaError::from)?;
        let (adapted, _) = adapter.adapt(weights, alpha, &episode, steps)?;
        let mut b = Bindings::new();
        crate::net::bind_weights(&mut b, &adapted);
        b.set("query_x", episode.query_x.clone());
        let out = evaluate_nodes(&g, &b, &[repr])
            .map_err(MetaError::from)?
            .pop()
            .expect("representation output");
        collected.push(out);
    }
    let refs: Vec<&Tensor<T>> = collected.iter().collect();
    let stacked = Tensor::stack(&refs);
    let rows = stacked.shape()[0] * stacked.shape()[1];
    let len = stacked.shape()[2];
    Ok(stacked.reshaped(&[rows, len]).expect("stack geometry"))
}
