//! Layered network definitions compiled into graph programs.
//!
//! Parameters are grouped by layer so the per-layer inner-loop learning
//! rates have a well-defined target. Two architectures cover the engine's
//! needs: the standard four-conv-block + classifier backbone, and a small
//! two-layer perceptron used wherever finite differences have to stay cheap.

use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of the truncated normal used for kernels/matrices.
pub const INIT_STDDEV: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Convolution (3x3, same padding) + batch norm + ReLU + 2x2 max pool.
    ConvBlock { filters: usize },
    /// Fully-connected layer with ReLU.
    DenseRelu { units: usize },
    /// Fully-connected classification layer (always the top layer).
    Dense { units: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Position from the bottom, 1-based.
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputShape {
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
    Flat {
        dim: usize,
    },
}

impl InputShape {
    /// Shape of one instance (no batch axis).
    pub fn instance_shape(&self) -> Vec<usize> {
        match *self {
            InputShape::Image {
                height,
                width,
                channels,
            } => vec![height, width, channels],
            InputShape::Flat { dim } => vec![dim],
        }
    }

    pub fn element_count(&self) -> usize {
        self.instance_shape().iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input: InputShape,
    pub ways: usize,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input {height}x{width} too small: four pooling stages need at least 16x16")]
    InputTooSmall { height: usize, width: usize },
    #[error("filter count must be at least 1")]
    NoFilters,
    #[error("way count must be at least 1")]
    NoWays,
    #[error("batch has shape {got:?}, expected {expected:?}")]
    BadBatchShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(
        "batch of size 1 cannot be normalized with batch statistics; \
         provide at least 2 instances per forward pass"
    )]
    BatchTooSmallForNorm,
    #[error("weights do not structurally match the network specification")]
    WeightsMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// The four-conv-block backbone: each block is conv(3x3, same) + batch
/// norm + ReLU + 2x2 max pool, followed by one fully-connected classifier.
pub fn conv4(
    filters: usize,
    height: usize,
    width: usize,
    channels: usize,
    ways: usize,
) -> Result<NetworkSpec, NetError> {
    if filters == 0 {
        return Err(NetError::NoFilters);
    }
    if ways == 0 {
        return Err(NetError::NoWays);
    }
    if height < 16 || width < 16 {
        return Err(NetError::InputTooSmall { height, width });
    }
    let mut layers = Vec::with_capacity(5);
    for index in 1..=4 {
        layers.push(LayerSpec {
            kind: LayerKind::ConvBlock { filters },
            index,
        });
    }
    layers.push(LayerSpec {
        kind: LayerKind::Dense { units: ways },
        index: 5,
    });
    Ok(NetworkSpec {
        layers,
        input: InputShape::Image {
            height,
            width,
            channels,
        },
        ways,
    })
}

/// Two-layer perceptron over flat inputs: hidden ReLU layer + classifier.
pub fn mlp(input_dim: usize, hidden: usize, ways: usize) -> Result<NetworkSpec, NetError> {
    if ways == 0 {
        return Err(NetError::NoWays);
    }
    Ok(NetworkSpec {
        layers: vec![
            LayerSpec {
                kind: LayerKind::DenseRelu { units: hidden },
                index: 1,
            },
            LayerSpec {
                kind: LayerKind::Dense { units: ways },
                index: 2,
            },
        ],
        input: InputShape::Flat { dim: input_dim },
        ways,
    })
}

/// Per-layer parameter tensors: `(name, shape)` in canonical order.
pub type ParamDefs = Vec<Vec<(&'static str, Vec<usize>)>>;

impl NetworkSpec {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn has_norm_layers(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::ConvBlock { .. }))
    }

    /// Feature dimension entering each layer, traced through pooling.
    fn feature_trace(&self) -> Vec<FeatureShape> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = match self.input {
            InputShape::Image {
                height,
                width,
                channels,
            } => FeatureShape::Map {
                h: height,
                w: width,
                c: channels,
            },
            InputShape::Flat { dim } => FeatureShape::Flat(dim),
        };
        shapes.push(cur);
        for layer in &self.layers {
            cur = match (layer.kind, cur) {
                (LayerKind::ConvBlock { filters }, FeatureShape::Map { h, w, .. }) => {
                    FeatureShape::Map {
                        h: h / 2,
                        w: w / 2,
                        c: filters,
                    }
                }
                (LayerKind::DenseRelu { units }, _) => FeatureShape::Flat(units),
                (LayerKind::Dense { units }, _) => FeatureShape::Flat(units),
                (LayerKind::ConvBlock { .. }, FeatureShape::Flat(_)) => {
                    unreachable!("convolution over flat features")
                }
            };
            shapes.push(cur);
        }
        shapes
    }

    /// Length of the flattened pre-classifier representation.
    pub fn repr_len(&self) -> usize {
        let trace = self.feature_trace();
        trace[trace.len() - 2].element_count()
    }

    /// Canonical parameter layout: names and shapes per layer.
    pub fn param_defs(&self) -> ParamDefs {
        let trace = self.feature_trace();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let fan_in = trace[i].element_count();
                match layer.kind {
                    LayerKind::ConvBlock { filters } => {
                        let cin = match trace[i] {
                            FeatureShape::Map { c, .. } => c,
                            FeatureShape::Flat(_) => unreachable!(),
                        };
                        vec![
                            ("kernel", vec![3, 3, cin, filters]),
                            ("bias", vec![filters]),
                            ("scale", vec![filters]),
                            ("offset", vec![filters]),
                        ]
                    }
                    LayerKind::DenseRelu { units } | LayerKind::Dense { units } => vec![
                        ("matrix", vec![fan_in, units]),
                        ("bias", vec![units]),
                    ],
                }
            })
            .collect()
    }

    /// Full leaf/tensor path for one parameter, e.g. `layer1/kernel`.
    pub fn param_path(layer_index: usize, name: &str) -> String {
        format!("layer{layer_index}/{name}")
    }
}

#[derive(Clone, Copy, Debug)]
enum FeatureShape {
    Map { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl FeatureShape {
    fn element_count(self) -> usize {
        match self {
            FeatureShape::Map { h, w, c } => h * w * c,
            FeatureShape::Flat(d) => d,
        }
    }
}

/// Network parameters grouped by layer. The grouping is exhaustive and
/// disjoint: every trainable tensor belongs to exactly one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredWeights<T: Scalar> {
    pub layers: Vec<LayerParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> LayeredWeights<T> {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn total_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.entries.iter())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Same layer structure, names, and shapes; values may differ.
    pub fn structural_match(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.entries.len() == b.entries.len()
                    && a.entries.iter().zip(&b.entries).all(|((na, ta), (nb, tb))| {
                        na == nb && ta.shape() == tb.shape()
                    })
            })
    }

    /// Flattens to `(path, tensor)` pairs in layer order.
    pub fn flatten(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .entries
                    .iter()
                    .map(move |(name, t)| (NetworkSpec::param_path(i + 1, name), t))
            })
            .collect()
    }

    /// Rebuilds the layer grouping from flattened `(path, tensor)` pairs.
    pub fn regroup(
        spec: &NetworkSpec,
        mut flat: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, NetError> {
        let defs = spec.param_defs();
        let mut layers = Vec::with_capacity(defs.len());
        for (i, layer_defs) in defs.iter().enumerate() {
            let mut entries = Vec::with_capacity(layer_defs.len());
            for (name, shape) in layer_defs {
                let path = NetworkSpec::param_path(i + 1, name);
                let pos = flat
                    .iter()
                    .position(|(p, _)| p == &path)
                    .ok_or(NetError::WeightsMismatch)?;
                let (_, tensor) = flat.swap_remove(pos);
                if tensor.shape() != shape.as_slice() {
                    return Err(NetError::WeightsMismatch);
                }
                entries.push((name.to_string(), tensor));
            }
            layers.push(LayerParams { entries });
        }
        if !flat.is_empty() {
            return Err(NetError::WeightsMismatch);
        }
        Ok(LayeredWeights { layers })
    }

    pub fn cast<U: Scalar>(&self) -> LayeredWeights<U> {
        LayeredWeights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    entries: l
                        .entries
                        .iter()
                        .map(|(n, t)| (n.clone(), t.cast()))
                        .collect(),
                })
                .collect(),
        }
    }

    /// Bitwise equality across every tensor.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.structural_match(other)
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.entries.iter().zip(&b.entries).all(|((_, ta), (_, tb))| {
                    ta.data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
            })
    }
}

/// Fresh weights for a specification: kernels and matrices from a truncated
/// normal (sigma 0.02, clipped at two sigma), biases and norm offsets zero,
/// norm scales one. Deterministic given the stream.
pub fn init_weights<T: Scalar>(spec: &NetworkSpec, rng: &mut Stream) -> LayeredWeights<T> {
    let layers = spec
        .param_defs()
        .iter()
        .map(|defs| LayerParams {
            entries: defs
                .iter()
                .map(|(name, shape)| {
                    let tensor = match *name {
                        "kernel" | "matrix" => Tensor::from_fn(shape, |_| {
                            T::from_f64(rng::truncated_normal(rng, INIT_STDDEV))
                        }),
                        "scale" => Tensor::full(shape, T::one()),
                        _ => Tensor::zeros(shape),
                    };
                    (name.to_string(), tensor)
                })
                .collect(),
        })
        .collect();
    LayeredWeights { layers }
}

/// Node ids of the weight leaves (or substituted interior nodes) feeding a
/// forward pass, mirroring the layer grouping.
#[derive(Clone, Debug)]
pub struct WeightNodes {
    pub layers: Vec<Vec<(String, NodeId)>>,
}

impl WeightNodes {
    pub fn flat(&self) -> Vec<NodeId> {
        self.layers
            .iter()
            .flat_map(|l| l.iter().map(|&(_, id)| id))
            .collect()
    }
}

/// Declares one parameter leaf per weight tensor, named by its path.
pub fn declare_weight_params(g: &mut Graph, spec: &NetworkSpec) -> Result<WeightNodes, GraphError> {
    let mut layers = Vec::new();
    for (i, defs) in spec.param_defs().iter().enumerate() {
        let mut nodes = Vec::with_capacity(defs.len());
        for (name, shape) in defs {
            let path = NetworkSpec::param_path(i + 1, name);
            let id = g.param(&path, shape)?;
            nodes.push((path, id));
        }
        layers.push(nodes);
    }
    Ok(WeightNodes { layers })
}

/// Output nodes of a forward pass.
pub struct ForwardNodes {
    pub logits: NodeId,
    /// Flattened pre-classifier activation.
    pub representation: NodeId,
}

/// Builds the forward computation for a batch. `weights` may point at
/// leaves (plain evaluation) or at interior nodes (adapted weights inside a
/// meta graph). `first_layer` skips already-computed bottom blocks when the
/// input node carries frozen-prefix features.
pub fn build_forward(
    g: &mut Graph,
    spec: &NetworkSpec,
    weights: &WeightNodes,
    input: NodeId,
    first_layer: usize,
) -> Result<ForwardNodes, GraphError> {
    let n = spec.layers.len();
    let batch = g.shape_of(input)[0];
    let pre = build_blocks(g, spec, weights, input, first_layer, n - 1)?;
    let flat_dim = crate::tensor::shape_len(g.shape_of(pre)) / batch;
    let representation = g.reshape(pre, &[batch, flat_dim])?;
    let top = &weights.layers[n - 1];
    let find = |name: &str| -> NodeId {
        top.iter()
            .find(|(path, _)| path.ends_with(name))
            .unwrap_or_else(|| panic!("missing weight {name} in the top layer"))
            .1
    };
    let logits = g.linear(representation, find("matrix"), find("bias"))?;
    Ok(ForwardNodes {
        logits,
        representation,
    })
}

/// Builds only layers `from..to` (0-based, exclusive end) and returns the
/// resulting feature node. Used to cache the frozen bottom of the network,
/// whose output does not change across inner-update steps.
pub fn build_blocks(
    g: &mut Graph,
    spec: &NetworkSpec,
    weights: &WeightNodes,
    input: NodeId,
    from: usize,
    to: usize,
) -> Result<NodeId, GraphError> {
    let batch = g.shape_of(input)[0];
    let mut cur = input;
    for (i, layer) in spec.layers.iter().enumerate().take(to).skip(from) {
        let nodes = &weights.layers[i];
        let find = |name: &str| -> NodeId {
            nodes
                .iter()
                .find(|(path, _)| path.ends_with(name))
                .unwrap_or_else(|| panic!("missing weight {name} in layer {}", i + 1))
                .1
        };
        match layer.kind {
            LayerKind::ConvBlock { .. } => {
                let conv = g.conv2d(cur, find("kernel"), find("bias"))?;
                let normed = g.batch_norm(conv, find("scale"), find("offset"))?;
                let act = g.relu(normed);
                cur = g.max_pool2(act)?;
            }
            LayerKind::DenseRelu { .. } => {
                let flat_dim = crate::tensor::shape_len(g.shape_of(cur)) / batch;
                let flat = g.reshape(cur, &[batch, flat_dim])?;
                let lin = g.linear(flat, find("matrix"), find("bias"))?;
                cur = g.relu(lin);
            }
            LayerKind::Dense { .. } => {
                let flat_dim = crate::tensor::shape_len(g.shape_of(cur)) / batch;
                let flat = g.reshape(cur, &[batch, flat_dim])?;
                cur = g.linear(flat, find("matrix"), find("bias"))?;
            }
        }
    }
    Ok(cur)
}

/// One forward evaluation: logits and the flattened pre-classifier
/// representation, both from a single pass.
pub struct ForwardPass<T: Scalar> {
    pub logits: Tensor<T>,
    pub representation: Tensor<T>,
}

pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    batch: &Tensor<T>,
) -> Result<ForwardPass<T>, NetError> {
    let instance = spec.input.instance_shape();
    let expected_rank = instance.len() + 1;
    if batch.rank() != expected_rank || batch.shape()[1..] != instance[..] {
        let mut expected = vec![batch.shape().first().copied().unwrap_or(0)];
        expected.extend(instance);
        return Err(NetError::BadBatchShape {
            expected,
            got: batch.shape().to_vec(),
        });
    }
    let n = batch.shape()[0];
    if n < 2 && spec.has_norm_layers() {
        return Err(NetError::BatchTooSmallForNorm);
    }
    if !verify_weights(spec, weights) {
        return Err(NetError::WeightsMismatch);
    }

    let mut g = Graph::new();
    let nodes = declare_weight_params(&mut g, spec)?;
    let mut input_shape = vec![n];
    input_shape.extend(instance);
    let input = g.input("batch", &input_shape)?;
    let out = build_forward(&mut g, spec, &nodes, input, 0)?;

    let mut bindings = crate::graph::Bindings::new();
    bindings.set("batch", batch.clone());
    bind_weights(&mut bindings, weights);
    let values =
        crate::graph::evaluate_nodes(&g, &bindings, &[out.logits, out.representation])?;
    let mut iter = values.into_iter();
    Ok(ForwardPass {
        logits: iter.next().unwrap(),
        representation: iter.next().unwrap(),
    })
}

/// Binds every weight tensor under its parameter path.
pub fn bind_weights<T: Scalar>(bindings: &mut crate::graph::Bindings<T>, weights: &LayeredWeights<T>) {
    for (path, tensor) in weights.flatten() {
        bindings.set(&path, tensor.clone());
    }
}

/// Checks weights against the spec's canonical layout.
pub fn verify_weights<T: Scalar>(spec: &NetworkSpec, weights: &LayeredWeights<T>) -> bool {
    let defs = spec.param_defs();
    weights.layers.len() == defs.len()
        && weights.layers.iter().zip(&defs).all(|(layer, def)| {
            layer.entries.len() == def.len()
                && layer.entries.iter().zip(def).all(|((name, t), (dn, ds))| {
                    name == dn && t.shape() == ds.as_slice()
                })
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn conv4_representation_lengths() {
        // 84x84x3 with 32 filters: 84 -> 42 -> 21 -> 10 -> 5, 5*5*32 = 800.
        let spec = conv4(32, 84, 84, 3, 5).unwrap();
        assert_eq!(spec.repr_len(), 800);
        assert_eq!(spec.ways, 5);
        // Same geometry with 64 filters doubles the length.
        assert_eq!(conv4(64, 84, 84, 3, 5).unwrap().repr_len(), 1600);
        // 28 -> 14 -> 7 -> 3 -> 1 under floor division.
        assert_eq!(conv4(32, 28, 28, 1, 5).unwrap().repr_len(), 32);
    }

    #[test]
    fn conv4_rejects_small_inputs() {
        assert!(matches!(
            conv4(32, 12, 12, 3, 5),
            Err(NetError::InputTooSmall { .. })
        ));
        assert!(conv4(32, 16, 16, 3, 5).is_ok());
    }

    #[test]
    fn init_is_seeded_and_follows_the_rules() {
        let spec = conv4(8, 20, 20, 1, 5).unwrap();
        let w1: LayeredWeights<f64> = init_weights(&spec, &mut stream(3, "init", 0));
        let w2: LayeredWeights<f64> = init_weights(&spec, &mut stream(3, "init", 0));
        let w3: LayeredWeights<f64> = init_weights(&spec, &mut stream(4, "init", 0));
        assert!(w1.bit_eq(&w2));
        assert!(!w1.bit_eq(&w3));

        for layer in &w1.layers {
            for (name, t) in &layer.entries {
                match name.as_str() {
                    "bias" | "offset" => assert!(t.data().iter().all(|&v| v == 0.0)),
                    "scale" => assert!(t.data().iter().all(|&v| v == 1.0)),
                    _ => {
                        assert!(t.data().iter().any(|&v| v != 0.0));
                        assert!(t.data().iter().all(|&v| v.abs() <= 2.0 * INIT_STDDEV));
                    }
                }
            }
        }
    }

    #[test]
    fn flatten_regroup_round_trip() {
        let spec = mlp(12, 7, 3).unwrap();
        let w: LayeredWeights<f64> = init_weights(&spec, &mut stream(5, "init", 0));
        let flat: Vec<(String, Tensor<f64>)> = w
            .flatten()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let back = LayeredWeights::regroup(&spec, flat).unwrap();
        assert!(w.bit_eq(&back));
    }

    #[test]
    fn forward_shapes_and_nonnegative_representation() {
        let spec = conv4(8, 20, 20, 1, 5).unwrap();
        let w: LayeredWeights<f64> = init_weights(&spec, &mut stream(6, "init", 0));
        let batch = Tensor::from_fn(&[4, 20, 20, 1], |i| (i % 17) as f64 / 17.0);
        let out = forward(&spec, &w, &batch).unwrap();
        assert_eq!(out.logits.shape(), &[4, 5]);
        assert_eq!(out.representation.shape(), &[4, spec.repr_len()]);
        assert!(out.representation.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_top_layer_zeroes_logits() {
        let spec = mlp(6, 4, 3).unwrap();
        let mut w: LayeredWeights<f64> = init_weights(&spec, &mut stream(7, "init", 0));
        for (_, t) in &mut w.layers[1].entries {
            *t = Tensor::zeros(t.shape());
        }
        let batch = Tensor::from_fn(&[5, 6], |i| i as f64 * 0.1 - 1.0);
        let out = forward(&spec, &w, &batch).unwrap();
        assert!(out.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_of_one_rejected_when_normalizing() {
        let spec = conv4(4, 16, 16, 1, 2).unwrap();
        let w: LayeredWeights<f64> = init_weights(&spec, &mut stream(8, "init", 0));
        let batch = Tensor::zeros(&[1, 16, 16, 1]);
        assert!(matches!(
            forward(&spec, &w, &batch),
            Err(NetError::BatchTooSmallForNorm)
        ));
        // No norm layers in the perceptron, so a singleton batch is fine.
        let spec = mlp(4, 3, 2).unwrap();
        let w: LayeredWeights<f64> = init_weights(&spec, &mut stream(8, "init", 1));
        assert!(forward(&spec, &w, &Tensor::zeros(&[1, 4])).is_ok());
    }

    #[test]
    fn forward_is_batch_permutation_equivariant() {
        // Without batch statistics the rows never interact: bitwise equal.
        let spec = mlp(6, 5, 3).unwrap();
        let w: LayeredWeights<f64> = init_weights(&spec, &mut stream(9, "init", 0));
        let batch = Tensor::from_fn(&[3, 6], |i| ((i * 31 % 97) as f64) / 97.0);
        let out = forward(&spec, &w, &batch).unwrap();
        let mut swapped = batch.clone();
        let d = swapped.data_mut();
        for k in 0..6 {
            d.swap(k, 2 * 6 + k);
        }
        let out2 = forward(&spec, &w, &swapped).unwrap();
        let (l, l2) = (out.logits.data(), out2.logits.data());
        for j in 0..3 {
            assert_eq!(l[j], l2[2 * 3 + j]);
            assert_eq!(l[2 * 3 + j], l2[j]);
            assert_eq!(l[3 + j], l2[3 + j]);
        }

        // Batch-statistics normalization sums over the batch in row order,
        // so a permutation can shift the rounding of the shared mean and
        // variance; equivariance holds to accumulation precision.
        let spec = conv4(4, 20, 20, 1, 3).unwrap();
        let w: LayeredWeights<f64> = init_weights(&spec, &mut stream(9, "init", 1));
        let batch = Tensor::from_fn(&[3, 20, 20, 1], |i| ((i * 31 % 97) as f64) / 97.0);
        let out = forward(&spec, &w, &batch).unwrap();
        let per = 20 * 20;
        let mut swapped = batch.clone();
        let d = swapped.data_mut();
        for k in 0..per {
            d.swap(k, 2 * per + k);
        }
        let out2 = forward(&spec, &w, &swapped).unwrap();
        let (l, l2) = (out.logits.data(), out2.logits.data());
        for j in 0..3 {
            assert!((l[j] - l2[2 * 3 + j]).abs() < 1e-12);
            assert!((l[2 * 3 + j] - l2[j]).abs() < 1e-12);
            assert!((l[3 + j] - l2[3 + j]).abs() < 1e-12);
        }
    }
}
