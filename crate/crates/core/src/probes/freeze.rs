//! The layer-freezing sweep: accuracy and adaptation latency for every
//! freeze depth, run as a paired design over the same episode streams for
//! two states (learned rates vs fixed rates).

use crate::data::ClassPool;
use crate::meta::{EvalOutcome, EvalRunOptions, Evaluator, MetaError};
use crate::net::{LayeredWeights, NetworkSpec};
use crate::tensor::Scalar;

use super::proportion::ProbeTask;
use super::ProbeError;

#[derive(Clone, Debug)]
pub struct FreezeRow {
    pub mode: String,
    /// Bottom layers frozen during the inner update.
    pub frozen_below: usize,
    pub accuracy: f64,
    pub half_width: f64,
    pub mean_adapt_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FreezeSweepReport {
    pub rows: Vec<FreezeRow>,
    pub episodes: usize,
    pub steps: usize,
}

impl FreezeSweepReport {
    pub fn row(&self, mode: &str, frozen_below: usize) -> Option<&FreezeRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.frozen_below == frozen_below)
    }
}

/// One labeled state entering the sweep.
pub struct SweepSubject<'a, T: Scalar> {
    pub label: &'a str,
    pub weights: &'a LayeredWeights<T>,
    pub alpha: &'a [T],
}

/// Evaluates every subject at every freeze depth `0..layer_count`. Timing
/// follows the measurement rules: single-threaded adaptation, median of
/// `timing_reps` inner updates per episode, clock around the inner update
/// only. The same seed drives episode sampling at every depth, so rows are
/// paired across both depth and subject.
#[allow(clippy::too_many_arguments)]
pub fn freeze_sweep<T: Scalar>(
    spec: &NetworkSpec,
    subjects: &[SweepSubject<'_, T>],
    pool: &ClassPool<T>,
    task: ProbeTask,
    episodes: usize,
    steps: usize,
    seed: u64,
    timing_reps: usize,
) -> Result<FreezeSweepReport, ProbeError> {
    let mut rows = Vec::new();
    for frozen_below in 0..spec.layer_count() {
        let evaluator: Evaluator<T> =
            Evaluator::new(spec, task.ways, task.shots, task.queries, frozen_below)?;
        for subject in subjects {
            let out: EvalOutcome = evaluator
                .evaluate_pool(
                    subject.weights,
                    subject.alpha,
                    pool,
                    episodes,
                    steps,
                    seed,
                    &EvalRunOptions {
                        timing_reps,
                        workers: 1,
                    },
                )
                .map_err(MetaError::from)?;
            rows.push(FreezeRow {
                mode: subject.label.to_string(),
                frozen_below,
                accuracy: out.accuracy,
                half_width: out.half_width,
                mean_adapt_seconds: out.mean_adapt_seconds,
            });
        }
    }
    Ok(FreezeSweepReport {
        rows,
        episodes,
        steps,
    })
}
