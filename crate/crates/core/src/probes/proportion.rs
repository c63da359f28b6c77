//! Update proportions: how much of the total relative weight change each
//! layer received during adaptation.
//!
//! Per layer, every parameter tensor is flattened into one vector; each
//! entry contributes its relative change `dw / w`, and the layer's share is
//! the L2 norm of those ratios normalized across layers. Entries whose
//! initial magnitude is below 1e-8 (freshly zero-initialized biases and
//! norm offsets) are excluded from the ratio and counted instead.

use crate::data::{sample_episode, ClassPool};
use crate::meta::{Adapter, MetaError};
use crate::net::{LayeredWeights, NetworkSpec};
use crate::rng;
use crate::tensor::Scalar;

use super::ProbeError;

/// Threshold below which an initial weight cannot anchor a relative change.
pub const EXCLUSION_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LayerProportions {
    /// Per-layer share, bottom to top; nonnegative, sums to one.
    pub p: Vec<f64>,
    /// Entries excluded by the near-zero-initial rule.
    pub excluded: usize,
}

/// Proportions for one adaptation: initial vs updated weights.
pub fn update_proportion<T: Scalar>(
    initial: &LayeredWeights<T>,
    updated: &LayeredWeights<T>,
) -> Result<LayerProportions, ProbeError> {
    if !initial.structural_match(updated) {
        return Err(ProbeError::Mismatch);
    }
    let mut norms = Vec::with_capacity(initial.layers.len());
    let mut excluded = 0usize;
    for (before, after) in initial.layers.iter().zip(&updated.layers) {
        let mut sum_sq = 0.0f64;
        for ((_, t0), (_, t1)) in before.entries.iter().zip(&after.entries) {
            for (&w0, &w1) in t0.data().iter().zip(t1.data()) {
                let w0 = w0.as_f64();
                let w1 = w1.as_f64();
                if w0.abs() < EXCLUSION_THRESHOLD {
                    excluded += 1;
                    continue;
                }
                let ratio = (w1 - w0) / w0;
                sum_sq += ratio * ratio;
            }
        }
        norms.push(sum_sq.sqrt());
    }
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Err(ProbeError::AllZero);
    }
    Ok(LayerProportions {
        p: norms.iter().map(|n| n / total).collect(),
        excluded,
    })
}

#[derive(Clone, Debug)]
pub struct ProportionReport {
    /// Mean per-layer share over episodes.
    pub p: Vec<f64>,
    pub episodes: usize,
    /// LWAU | MAML | conventional.
    pub mode: String,
    pub ways: usize,
    pub shots: usize,
    pub steps: usize,
    pub mean_excluded: f64,
}

/// Episode geometry a probe runs under.
#[derive(Clone, Copy, Debug)]
pub struct ProbeTask {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

/// Adapts on freshly sampled episodes and averages the per-episode
/// proportions. Episode streams derive from `(seed, "probe-episode", i)`,
/// so runs over different states see the same tasks: a paired design.
pub fn mean_update_proportions<T: Scalar>(
    spec: &NetworkSpec,
    weights: &LayeredWeights<T>,
    alpha: &[T],
    pool: &ClassPool<T>,
    task: ProbeTask,
    episodes: usize,
    steps: usize,
    seed: u64,
    mode: &str,
) -> Result<ProportionReport, ProbeError> {
    let adapter: Adapter<T> = Adapter::new(spec, task.ways, task.shots, 0)?;
    let mut mean_p = vec![0.0f64; spec.layer_count()];
    let mut mean_excluded = 0.0f64;
    for i in 0..episodes {
        let mut stream = rng::stream(seed, "probe-episode", i as u64);
        let episode = sample_episode(pool, task.ways, task.shots, task.queries, &mut stream)
            .map_err(MetaError::from)?;
        let (adapted, _) = adapter.adapt(weights, alpha, &episode, steps)?;
        let one = update_proportion(weights, &adapted)?;
        for (acc, p) in mean_p.iter_mut().zip(&one.p) {
            *acc += p / episodes as f64;
        }
        mean_excluded += one.excluded as f64 / episodes as f64;
    }
    Ok(ProportionReport {
        p: mean_p,
        episodes,
        mode: mode.to_string(),
        ways: task.ways,
        shots: task.shots,
        steps,
        mean_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerParams;
    use crate::tensor::Tensor;

    fn single_tensor_layers(values: &[(f64, f64)]) -> (LayeredWeights<f64>, LayeredWeights<f64>) {
        let build = |pick: fn(&(f64, f64)) -> f64, vals: &[(f64, f64)]| LayeredWeights {
            layers: vals
                .iter()
                .map(|pair| LayerParams {
                    entries: vec![("w".to_string(), Tensor::scalar(pick(pair)))],
                })
                .collect(),
        };
        (build(|p| p.0, values), build(|p| p.0 + p.1, values))
    }

    #[test]
    fn single_changed_layer_takes_the_whole_proportion() {
        let (init, updated) =
            single_tensor_layers(&[(1.0, 0.0), (2.0, 0.0), (1.5, 0.3), (4.0, 0.0), (1.0, 0.0)]);
        let out = update_proportion(&init, &updated).unwrap();
        assert_eq!(out.p, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn equal_relative_changes_split_evenly() {
        let (init, updated) = single_tensor_layers(&[(1.0, 0.1), (2.0, 0.2)]);
        let out = update_proportion(&init, &updated).unwrap();
        assert_eq!(out.p, vec![0.5, 0.5]);
    }

    #[test]
    fn three_layer_hand_fixture() {
        // w = [2], [1], [4]; dw = [0.2], [0.3], [0.0]: ratios 0.1, 0.3, 0,
        // so p = [0.25, 0.75, 0]. Decimal literals carry representation
        // error through the subtraction, so the claim holds to one ulp.
        let (init, updated) = single_tensor_layers(&[(2.0, 0.2), (1.0, 0.3), (4.0, 0.0)]);
        let out = update_proportion(&init, &updated).unwrap();
        assert!((out.p[0] - 0.25).abs() < 1e-15);
        assert!((out.p[1] - 0.75).abs() < 1e-15);
        assert_eq!(out.p[2], 0.0);
        let sum: f64 = out.p.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);

        // The dyadic twin of the fixture (every quantity a binary
        // fraction) exercises the same arithmetic with no representation
        // error, and there the result is exact, bitwise.
        let (init, updated) = single_tensor_layers(&[(2.0, 0.5), (1.0, 0.75), (4.0, 0.0)]);
        let out = update_proportion(&init, &updated).unwrap();
        assert_eq!(out.p, vec![0.25, 0.75, 0.0]);
    }

    #[test]
    fn near_zero_initial_entries_are_excluded() {
        let init = LayeredWeights {
            layers: vec![LayerParams {
                entries: vec![(
                    "w".to_string(),
                    Tensor::new(vec![3], vec![1.0, 0.0, 1e-12]).unwrap(),
                )],
            }],
        };
        let mut updated = init.clone();
        updated.layers[0].entries[0].1 = Tensor::new(vec![3], vec![1.1, 0.5, 0.5]).unwrap();
        let out = update_proportion(&init, &updated).unwrap();
        assert_eq!(out.excluded, 2);
        assert_eq!(out.p, vec![1.0]);
    }

    #[test]
    fn all_zero_change_is_rejected_and_scaling_is_covariant() {
        let (init, same) = single_tensor_layers(&[(1.0, 0.0), (2.0, 0.0)]);
        assert!(matches!(
            update_proportion(&init, &same),
            Err(ProbeError::AllZero)
        ));

        // Scaling every delta by a power of two is exact in binary
        // floating point, so the proportions match bitwise; a general
        // constant matches to rounding.
        let (init, updated) = single_tensor_layers(&[(1.3, 0.07), (0.9, -0.22), (2.1, 0.4)]);
        let p1 = update_proportion(&init, &updated).unwrap().p;
        let scaled4 = scale_deltas(&init, &updated, 4.0);
        let p4 = update_proportion(&init, &scaled4).unwrap().p;
        assert_eq!(p1, p4);
        let scaled3 = scale_deltas(&init, &updated, 3.0);
        let p3 = update_proportion(&init, &scaled3).unwrap().p;
        for (a, b) in p1.iter().zip(&p3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn scale_deltas(
        init: &LayeredWeights<f64>,
        updated: &LayeredWeights<f64>,
        c: f64,
    ) -> LayeredWeights<f64> {
        let mut out = init.clone();
        for (li, layer) in out.layers.iter_mut().enumerate() {
            for (ei, (_, t)) in layer.entries.iter_mut().enumerate() {
                let w0 = &init.layers[li].entries[ei].1;
                let w1 = &updated.layers[li].entries[ei].1;
                *t = w0.zip_map(w1, |a, b| a + c * (b - a));
            }
        }
        out
    }
}
