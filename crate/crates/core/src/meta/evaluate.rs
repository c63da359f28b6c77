//! The episodic evaluation protocol: adapt on each task's support set,
//! score argmax accuracy on its query set, report the mean with a normal
//! 95% interval and the mean adaptation wall time.

use std::time::Instant;

use rayon::prelude::*;

use crate::data::{sample_episode, ClassPool, Episode, Split};
use crate::graph::{evaluate_nodes, Bindings, Graph, NodeId};
use crate::net::{build_forward, declare_weight_params, LayeredWeights, NetworkSpec};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

use super::inner::Adapter;
use super::state::MetaState;
use super::{MetaError, TrainParams};

#[derive(Clone, Copy, Debug)]
pub struct EvalRunOptions {
    /// Inner-update repetitions per episode for timing; the median is
    /// reported. Anything above 1 forces single-threaded execution so the
    /// clock measures adaptation, not contention.
    pub timing_reps: usize,
    pub workers: usize,
}

impl Default for EvalRunOptions {
    fn default() -> Self {
        EvalRunOptions {
            timing_reps: 1,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOutcome {
    pub accuracy: f64,
    /// 1.96 standard errors over episodes.
    pub half_width: f64,
    pub mean_adapt_seconds: f64,
    pub episodes: usize,
}

/// Compiled graphs for one evaluation shape (episode geometry and freeze
/// depth); reusable across episodes, states, and sweep columns.
pub struct Evaluator<T: Scalar> {

    ways: usize,
    shots: usize,
    queries: usize,
    adapter: Adapter<T>,
    query_graph: Graph,
    query_logits: NodeId,
}

impl<T: Scalar> Evaluator<T> {
    pub fn new(
        spec: &NetworkSpec,
        ways: usize,
        shots: usize,
        queries: usize,
        freeze_below: usize,
    ) -> Result<Self, MetaError> {
        let adapter = Adapter::new(spec, ways, shots, freeze_below)?;
        let mut g = Graph::new();
        let nodes = declare_weight_params(&mut g, spec)?;
        let mut shape = vec![ways * queries];
        shape.extend(spec.input.instance_shape());
        let x = g.input("query_x", &shape)?;
        let fwd = build_forward(&mut g, spec, &nodes, x, 0)?;
        Ok(Evaluator {
            ways,
            shots,
            queries,
            adapter,
            query_graph: g,
            query_logits: fwd.logits,
        })
    }

    /// Accuracy of adapted weights on one episode's query set.
    fn episode_accuracy(
        &self,
        adapted: &LayeredWeights<T>,
        episode: &Episode<T>,
    ) -> Result<f64, MetaError> {
        let mut b = Bindings::new();
        crate::net::bind_weights(&mut b, adapted);
        b.set("query_x", episode.query_x.clone());
        let logits = evaluate_nodes(&self.query_graph, &b, &[self.query_logits])?
            .pop()
            .expect("logits output");
        Ok(accuracy_from_logits(&logits, &episode.query_y))
    }

    fn run_episode(
        &self,
        weights: &LayeredWeights<T>,
        alpha: &[T],
        episode: &Episode<T>,
        steps: usize,
        timing_reps: usize,
    ) -> Result<(f64, f64), MetaError> {
        let mut times = Vec::with_capacity(timing_reps.max(1));
        let mut adapted = None;
        for _ in 0..timing_reps.max(1) {
            let started = Instant::now();
            let (w, _) = self.adapter.adapt(weights, alpha, episode, steps)?;
            times.push(started.elapsed().as_secs_f64());
            adapted = Some(w);
        }
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let median = times[times.len() / 2];
        let acc = self.episode_accuracy(&adapted.expect("at least one rep"), episode)?;
        Ok((acc, median))
    }

    /// Evaluates a state over freshly sampled episodes from the pool.
    /// Episode streams derive from `(seed, "eval-episode", index)`, so two
    /// calls with the same seed and pool see identical tasks regardless of
    /// freeze depth or state: the paired design the freeze sweep needs.
    pub fn evaluate_pool(
        &self,
        weights: &LayeredWeights<T>,
        alpha: &[T],
        pool: &ClassPool<T>,
        episodes: usize,
        steps: usize,
        seed: u64,
        opts: &EvalRunOptions,
    ) -> Result<EvalOutcome, MetaError> {
        if pool.split == Split::Train {
            return Err(MetaError::TrainPoolForEval);
        }
        let run = |index: usize| -> Result<(f64, f64), MetaError> {
            let mut stream = rng::stream(seed, "eval-episode", index as u64);
            let episode = sample_episode(pool, self.ways, self.shots, self.queries, &mut stream)?;
            self.run_episode(weights, alpha, &episode, steps, opts.timing_reps)
        };

        let results: Vec<(f64, f64)> = if opts.workers > 1 && opts.timing_reps <= 1 {
            let pool_threads = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .expect("thread pool");
            pool_threads.install(|| {
                (0..episodes)
                    .into_par_iter()
                    .map(run)
                    .collect::<Result<Vec<_>, _>>()
            })?
        } else {
            (0..episodes).map(run).collect::<Result<Vec<_>, _>>()?
        };

        let accs: Vec<f64> = results.iter().map(|&(a, _)| a).collect();
        let times: Vec<f64> = results.iter().map(|&(_, t)| t).collect();
        Ok(EvalOutcome {
            accuracy: mean(&accs),
            half_width: 1.96 * stderr(&accs),
            mean_adapt_seconds: mean(&times),
            episodes,
        })
    }
}

/// Module-level convenience mirroring the operation signature.
pub fn evaluate<T: Scalar>(
    state: &MetaState<T>,
    spec: &NetworkSpec,
    pool: &ClassPool<T>,
    episodes: usize,
    test_steps: usize,
    freeze_below: usize,
    params: &TrainParams,
    opts: &EvalRunOptions,
) -> Result<EvalOutcome, MetaError> {
    let evaluator = Evaluator::new(spec, params.ways, params.shots, params.queries, freeze_below)?;
    evaluator.evaluate_pool(
        &state.weights,
        &state.alpha,
        pool,
        episodes,
        test_steps,
        state.seed,
        opts,
    )
}

/// Fraction of rows whose argmax matches the label; exact ties resolve to
/// the lowest class index.
pub fn accuracy_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let cols = logits.shape()[1];
    let mut correct = 0usize;
    for (row, &label) in logits.data().chunks_exact(cols).zip(labels) {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == label);
    }
    correct as f64 / labels.len().max(1) as f64
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stderr(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}
