//! Central-difference verification of the meta-gradient.
//!
//! The oracle perturbs every scalar of `(theta, alpha)` and re-runs the
//! *replayed* composite map — host-side inner updates followed by the
//! query loss — so it is independent of the unrolled graph whose gradient
//! it checks. Double precision only.

use crate::data::Episode;
use crate::net::{LayeredWeights, NetworkSpec};

use super::inner::{query_loss, Adapter};
use super::state::MetaState;
use super::step::Trainer;
use super::{MetaError, TrainParams};

#[derive(Clone, Copy, Debug, Default)]
pub struct MetaGradCheckReport {
    /// Worst relative error over entries with oracle magnitude >= 1e-8.
    pub max_rel_err: f64,
    /// Worst absolute error over the near-zero entries.
    pub max_abs_err_small: f64,
    pub entries: usize,
    pub inner_steps: usize,
}

impl MetaGradCheckReport {
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel_err <= rel_tol && self.max_abs_err_small <= abs_tol
    }
}

const SMALL: f64 = 1e-8;

/// Checks the analytic meta-gradient of `sum_k L_q(theta'_k)` against
/// central differences over every entry of theta and alpha.
pub fn meta_gradient_check(
    spec: &NetworkSpec,
    params: &TrainParams,
    state: &MetaState<f64>,
    batch: &[Episode<f64>],
    fd_step: f64,
) -> Result<MetaGradCheckReport, MetaError> {
    assert!(fd_step > 0.0, "finite-difference step must be positive");
    let trainer: Trainer<f64> = Trainer::new(spec.clone(), params.clone())?;
    let (_, _, analytic_theta, analytic_alpha) = trainer.meta_gradient(state, batch, 1)?;

    let adapter = Adapter::new(spec, params.ways, params.shots, 0)?;
    let steps = params.inner_steps_train;
    let l1 = params.l1_coefficient;
    let composite = |weights: &LayeredWeights<f64>, alpha: &[f64]| -> Result<f64, MetaError> {
        let mut total = 0.0;
        for episode in batch {
            let (adapted, _) = adapter.adapt(weights, alpha, episode, steps)?;
            total += query_loss(spec, &adapted, episode, l1)?;
        }
        Ok(total)
    };

    let mut report = MetaGradCheckReport {
        inner_steps: steps,
        ..MetaGradCheckReport::default()
    };
    let mut record = |analytic: f64, oracle: f64| {
        report.entries += 1;
        if oracle.abs() < SMALL {
            report.max_abs_err_small = report.max_abs_err_small.max((analytic - oracle).abs());
        } else {
            report.max_rel_err = report
                .max_rel_err
                .max((analytic - oracle).abs() / oracle.abs());
        }
    };

    // Every theta entry.
    let mut work = state.weights.clone();
    let mut slot = 0usize;
    for li in 0..work.layers.len() {
        for ei in 0..work.layers[li].entries.len() {
            let n = work.layers[li].entries[ei].1.len();
            for i in 0..n {
                let base = work.layers[li].entries[ei].1.data()[i];
                work.layers[li].entries[ei].1.data_mut()[i] = base + fd_step;
                let plus = composite(&work, &state.alpha)?;
                work.layers[li].entries[ei].1.data_mut()[i] = base - fd_step;
                let minus = composite(&work, &state.alpha)?;
                work.layers[li].entries[ei].1.data_mut()[i] = base;
                record(
                    analytic_theta[slot].data()[i],
                    (plus - minus) / (2.0 * fd_step),
                );
            }
            slot += 1;
        }
    }

    // Every alpha entry, when alpha participates in training.
    if params.trains_alpha() {
        let mut alpha = state.alpha.clone();
        for (i, &analytic) in analytic_alpha.iter().enumerate() {
            let base = alpha[i];
            alpha[i] = base + fd_step;
            let plus = composite(&state.weights, &alpha)?;
            alpha[i] = base - fd_step;
            let minus = composite(&state.weights, &alpha)?;
            alpha[i] = base;
            record(analytic, (plus - minus) / (2.0 * fd_step));
        }
    }

    Ok(report)
}

/// The canned configuration used by the `probe gradcheck` command and the
/// acceptance gate: a two-layer perceptron with under 200 parameters on a
/// 2-way 1-shot blob episode.
pub fn standard_check(
    inner_steps: usize,
    seed: u64,
    fd_step: f64,
) -> Result<MetaGradCheckReport, MetaError> {
    use crate::data::{generate_blob_pool, sample_episode, BlobParams, Split};

    let spec = crate::net::mlp(8, 8, 2)?;
    let params = TrainParams {
        ways: 2,
        shots: 1,
        queries: 4,
        inner_steps_train: inner_steps,
        meta_batch: 1,
        ..TrainParams::default()
    };
    let pool = generate_blob_pool::<f64>(
        &BlobParams {
            classes: 6,
            per_class: 10,
            dim: 8,
            separation: 3.0,
        },
        Split::Train,
        &mut crate::rng::stream(seed, "gradcheck-pool", 0),
    );
    let episode = sample_episode(
        &pool,
        params.ways,
        params.shots,
        params.queries,
        &mut crate::rng::stream(seed, "gradcheck-episode", 0),
    )?;
    let trainer: Trainer<f64> = Trainer::new(spec.clone(), params.clone())?;
    let state = trainer.init_state(seed, "gradcheck");
    meta_gradient_check(&spec, &params, &state, &[episode], fd_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_check_passes_at_one_step() {
        let report = standard_check(1, 17, 1e-5).unwrap();
        assert!(report.entries > 90);
        assert!(
            report.within(1e-5, 1e-8),
            "rel {:.3e} abs {:.3e}",
            report.max_rel_err,
            report.max_abs_err_small
        );
    }

    #[test]
    fn first_order_approximation_deviates_from_the_oracle() {
        // With inner gradients held constant in the outer pass, the
        // meta-gradient is genuinely different; the switch must show up.
        use crate::data::{generate_blob_pool, sample_episode, BlobParams, Split};
        let spec = crate::net::mlp(8, 8, 2).unwrap();
        let params = TrainParams {
            ways: 2,
            shots: 1,
            queries: 4,
            inner_steps_train: 3,
            meta_batch: 1,
            second_order: false,
            // A large rate makes the curvature term visible.
            alpha_init: 0.5,
            ..TrainParams::default()
        };
        let pool = generate_blob_pool::<f64>(
            &BlobParams {
                classes: 6,
                per_class: 10,
                dim: 8,
                separation: 3.0,
            },
            Split::Train,
            &mut crate::rng::stream(23, "gradcheck-pool", 0),
        );
        let episode = sample_episode(&pool, 2, 1, 4, &mut crate::rng::stream(23, "e", 0)).unwrap();
        let trainer: Trainer<f64> = Trainer::new(spec.clone(), params.clone()).unwrap();
        let state = trainer.init_state(23, "fo");
        let report = meta_gradient_check(&spec, &params, &state, &[episode], 1e-5).unwrap();
        assert!(
            report.max_rel_err > 1e-3,
            "first-order gradient unexpectedly matched: {:.3e}",
            report.max_rel_err
        );
    }
}
