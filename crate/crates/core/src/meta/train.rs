//! The training driver: sample a batch of tasks, take a meta-step, and at
//! every logging interval record the per-layer rates, validate on fresh
//! episodes, and checkpoint.

use std::path::{Path, PathBuf};

use crate::data::{sample_episode, ClassPool, Episode};
use crate::rng;
use crate::tensor::Scalar;

use super::checkpoint::save_state;
use super::evaluate::{EvalRunOptions, Evaluator};
use super::state::MetaState;
use super::step::Trainer;
use super::MetaError;

pub struct TrainPools<'a, T: Scalar> {
    pub train: &'a ClassPool<T>,
    pub validation: &'a ClassPool<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub output_dir: Option<PathBuf>,
    /// Iterations between log/validation/checkpoint points. The final
    /// iteration always logs and checkpoints.
    pub interval: u64,
    pub workers: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            output_dir: None,
            interval: 500,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub alpha: Vec<f64>,
    pub validation_accuracy: f64,
    pub mean_query_loss: f64,
    pub mean_support_loss: f64,
}

pub struct TrainOutcome<T: Scalar> {
    pub final_state: MetaState<T>,
    /// Peak-validation state, reported separately from the final one.
    pub best_state: MetaState<T>,
    pub best_validation_accuracy: f64,
    pub log: Vec<TrainLogRow>,
}

/// Runs the configured number of meta-iterations. Fully deterministic for
/// a given seed: episode streams derive from `(seed, "train-episode",
/// iteration * batch + k)` and the meta-gradient reduction is
/// order-fixed, so worker count does not change results.
pub fn train<T: Scalar>(
    trainer: &Trainer<T>,
    pools: &TrainPools<'_, T>,
    seed: u64,
    fingerprint: &str,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>, MetaError> {
    let params = trainer.params().clone();
    let mut state = trainer.init_state(seed, fingerprint);
    let mut log = Vec::new();
    let mut best_state = state.clone();
    let mut best_val = f64::NEG_INFINITY;

    let validator = Evaluator::new(
        trainer.spec(),
        params.ways,
        params.shots,
        params.queries,
        0,
    )?;
    let val_opts = EvalRunOptions {
        timing_reps: 1,
        workers: opts.workers,
    };

    if let Some(dir) = &opts.output_dir {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|source| {
            MetaError::Archive(crate::io::ArchiveError::Io {
                path: dir.display().to_string(),
                source,
            })
        })?;
    }

    let mut running_query_loss = 0.0f64;
    let mut running_support_loss = 0.0f64;
    let mut since_log = 0u64;
    for iter in 0..params.iterations {
        let batch = sample_batch(pools.train, &params, seed, iter)?;
        let (next, stats) = trainer.meta_step_with_stats(&state, &batch, opts.workers)?;
        state = next;
        running_query_loss += stats.mean_query_loss;
        running_support_loss += stats.mean_support_loss;
        since_log += 1;

        let is_last = iter + 1 == params.iterations;
        if is_last || (opts.interval > 0 && (iter + 1) % opts.interval == 0) {
            let val = validator.evaluate_pool(
                &state.weights,
                &state.alpha,
                pools.validation,
                params.val_episodes,
                params.inner_steps_test,
                seed,
                &val_opts,
            )?;
            let row = TrainLogRow {
                iteration: state.iteration,
                alpha: state.alpha_f64(),
                validation_accuracy: val.accuracy,
                mean_query_loss: running_query_loss / since_log.max(1) as f64,
                mean_support_loss: running_support_loss / since_log.max(1) as f64,
            };
            running_query_loss = 0.0;
            running_support_loss = 0.0;
            since_log = 0;
            if val.accuracy > best_val {
                best_val = val.accuracy;
                best_state = state.clone();
            }
            if let Some(dir) = &opts.output_dir {
                let name = format!("iter_{:07}.ckpt", state.iteration);
                checkpoint_or_abort(&state, &dir.join("checkpoints").join(name))?;
            }
            log.push(row);
        }
    }

    if let Some(dir) = &opts.output_dir {
        checkpoint_or_abort(&state, &dir.join("checkpoints").join("final.ckpt"))?;
        checkpoint_or_abort(&best_state, &dir.join("checkpoints").join("best.ckpt"))?;
        write_log(&log, &dir.join("training_log.csv"))?;
    }

    Ok(TrainOutcome {
        final_state: state,
        best_state,
        best_validation_accuracy: best_val,
        log,
    })
}

/// Samples the meta-batch for one iteration from derived streams.
pub fn sample_batch<T: Scalar>(
    pool: &ClassPool<T>,
    params: &super::TrainParams,
    seed: u64,
    iteration: u64,
) -> Result<Vec<Episode<T>>, MetaError> {
    (0..params.meta_batch)
        .map(|k| {
            let mut stream = rng::stream(
                seed,
                "train-episode",
                iteration * params.meta_batch as u64 + k as u64,
            );
            sample_episode(pool, params.ways, params.shots, params.queries, &mut stream)
                .map_err(MetaError::from)
        })
        .collect()
}

/// On checkpoint failure the state survives in memory; one emergency write
/// goes to the system temp dir before the error surfaces.
fn checkpoint_or_abort<T: Scalar>(state: &MetaState<T>, path: &Path) -> Result<(), MetaError> {
    match save_state(state, path) {
        Ok(()) => Ok(()),
        Err(source) => {
            let emergency = std::env::temp_dir().join("lwau-emergency.ckpt");
            let emergency_note = match save_state(state, &emergency) {
                Ok(()) => format!("written to {}", emergency.display()),
                Err(e) => format!("also failed ({e})"),
            };
            Err(MetaError::CheckpointWrite {
                path: path.display().to_string(),
                emergency: emergency_note,
                source: Box::new(source),
            })
        }
    }
}

fn write_log(log: &[TrainLogRow], path: &Path) -> Result<(), MetaError> {
    let mut text = String::new();
    let width = log.first().map(|r| r.alpha.len()).unwrap_or(0);
    text.push_str("iteration");
    for i in 1..=width {
        text.push_str(&format!(",alpha_{i}"));
    }
    text.push_str(",validation_accuracy,mean_query_loss,mean_support_loss\n");
    for row in log {
        text.push_str(&row.iteration.to_string());
        for a in &row.alpha {
            text.push_str(&format!(",{a}"));
        }
        text.push_str(&format!(
            ",{},{},{}\n",
            row.validation_accuracy, row.mean_query_loss, row.mean_support_loss
        ));
    }
    std::fs::write(path, text).map_err(|source| {
        MetaError::Archive(crate::io::ArchiveError::Io {
            path: path.display().to_string(),
            source,
        })
    })
}
