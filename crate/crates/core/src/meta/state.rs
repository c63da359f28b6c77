//! The unit of checkpoint persistence: weights, per-layer rates, outer
//! optimizer accumulators, and the lineage needed to resume.

use crate::net::LayeredWeights;
use crate::tensor::{Scalar, Tensor};

/// Outer-optimizer accumulators, one slot per trainable tensor (the weight
/// tensors in layer order, then the alpha vector when it trains).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_like(slots: &[&Tensor<T>]) -> Self {
        AdamState {
            m: slots.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: slots.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetaState<T: Scalar> {
    pub weights: LayeredWeights<T>,
    /// One scalar inner learning rate per layer, bottom to top.
    pub alpha: Vec<T>,
    pub opt: AdamState<T>,
    pub iteration: u64,
    /// Master seed all derived streams trace back to.
    pub seed: u64,
    /// Fingerprint of the configuration that produced this state.
    pub fingerprint: String,
}

impl<T: Scalar> MetaState<T> {
    /// Bitwise equality of everything except the fingerprint label:
    /// weights, alpha, optimizer accumulators, counters, seed.
    pub fn state_bits_eq(&self, other: &Self) -> bool {
        let bits = |t: &Tensor<T>, u: &Tensor<T>| {
            t.shape() == u.shape()
                && t.data()
                    .iter()
                    .zip(u.data())
                    .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
        };
        self.iteration == other.iteration
            && self.seed == other.seed
            && self.opt.step == other.opt.step
            && self.weights.bit_eq(&other.weights)
            && self.alpha.len() == other.alpha.len()
            && self
                .alpha
                .iter()
                .zip(&other.alpha)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
            && self.opt.m.len() == other.opt.m.len()
            && self.opt.m.iter().zip(&other.opt.m).all(|(a, b)| bits(a, b))
            && self.opt.v.iter().zip(&other.opt.v).all(|(a, b)| bits(a, b))
    }

    pub fn alpha_f64(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a.as_f64()).collect()
    }
}
