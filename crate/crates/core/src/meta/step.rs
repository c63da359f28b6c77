//! The outer-loop step: per-episode meta-gradients through the unrolled
//! inner updates, a fixed-order reduction over the batch, and one Adam
//! update of the trainable set.

use rayon::prelude::*;

use crate::data::Episode;
use crate::graph::{evaluate_nodes, Bindings, GraphError, NodeId};
use crate::net::{LayeredWeights, NetError, NetworkSpec};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

use super::adam::adam_update;
use super::graphs::{alpha_leaf_name, build_meta_graph, MetaGraph};
use super::state::{AdamState, MetaState};
use super::{MetaError, TrainParams};

/// Holds the compiled meta graph for one (network, parameters) pair and
/// drives meta-steps against it. Episodes only change leaf bindings, so
/// construction cost is paid once.
pub struct Trainer<T: Scalar> {
    spec: NetworkSpec,
    params: TrainParams,
    meta: MetaGraph,
    _precision: std::marker::PhantomData<T>,
}

/// Pre-step batch losses, for training-loop logging.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub mean_query_loss: f64,
    pub mean_support_loss: f64,
}

/// Evaluated outputs for one episode of the batch.
struct EpisodeGrads<T: Scalar> {
    query_loss: T,
    support_loss: T,
    theta: Vec<Tensor<T>>,
    alpha: Vec<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(spec: NetworkSpec, params: TrainParams) -> Result<Self, MetaError> {
        params.validate()?;
        if spec.has_norm_layers() && params.ways * params.shots < 2 {
            return Err(MetaError::Net(NetError::BatchTooSmallForNorm));
        }
        let meta = build_meta_graph(&spec, &params)?;
        Ok(Trainer {
            spec,
            params,
            meta,
            _precision: std::marker::PhantomData,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    /// Fresh state: seeded weight initialization, uniform alpha, zeroed
    /// optimizer accumulators.
    pub fn init_state(&self, seed: u64, fingerprint: &str) -> MetaState<T> {
        let mut stream = rng::stream(seed, "weights-init", 0);
        let weights = crate::net::init_weights::<T>(&self.spec, &mut stream);
        let alpha = vec![T::from_f64(self.params.alpha_init); self.spec.layer_count()];
        let opt = self.zeroed_opt(&weights);
        MetaState {
            weights,
            alpha,
            opt,
            iteration: 0,
            seed,
            fingerprint: fingerprint.to_string(),
        }
    }

    fn zeroed_opt(&self, weights: &LayeredWeights<T>) -> AdamState<T> {
        let mut slots: Vec<&Tensor<T>> = weights
            .layers
            .iter()
            .flat_map(|l| l.entries.iter().map(|(_, t)| t))
            .collect();
        let alpha_tensor;
        if self.params.trains_alpha() {
            alpha_tensor = Tensor::<T>::zeros(&[self.spec.layer_count()]);
            slots.push(&alpha_tensor);
        }
        AdamState::zeros_like(&slots)
    }

    /// Effective outer learning rate at an iteration, under the decay
    /// schedule (factor applied once per full period).
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let periods = (iteration / self.params.lr_decay_period) as i32;
        self.params.meta_lr * self.params.lr_decay_factor.powi(periods)
    }

    /// Meta-gradient of the summed query losses over a batch, without
    /// applying any update. Returns `(sum of query losses, mean support
    /// loss, per-tensor theta gradients, alpha gradients)`.
    pub fn meta_gradient(
        &self,
        state: &MetaState<T>,
        batch: &[Episode<T>],
        workers: usize,
    ) -> Result<(T, T, Vec<Tensor<T>>, Vec<T>), MetaError> {
        let per_episode = self.episode_grads(state, batch, workers)?;

        // Fixed-order reduction: episode order, not completion order.
        let mut loss_sum = T::zero();
        let mut support_sum = T::zero();
        let mut theta: Vec<Tensor<T>> = per_episode[0]
            .theta
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        let mut alpha = vec![T::zero(); per_episode[0].alpha.len()];
        for ep in &per_episode {
            loss_sum = loss_sum + ep.query_loss;
            support_sum = support_sum + ep.support_loss;
            for (acc, g) in theta.iter_mut().zip(&ep.theta) {
                acc.add_scaled_assign(g, T::one());
            }
            for (acc, &g) in alpha.iter_mut().zip(&ep.alpha) {
                *acc = *acc + g;
            }
        }
        let support_mean = support_sum / T::from_f64(batch.len() as f64);
        Ok((loss_sum, support_mean, theta, alpha))
    }

    /// One outer update. The input state is untouched; a new state comes
    /// back with the iteration counter advanced. A non-finite gradient
    /// rejects the step and names the offending episode.
    pub fn meta_step(
        &self,
        state: &MetaState<T>,
        batch: &[Episode<T>],
        workers: usize,
    ) -> Result<MetaState<T>, MetaError> {
        self.meta_step_with_stats(state, batch, workers)
            .map(|(state, _)| state)
    }

    /// [`Trainer::meta_step`] plus the pre-step batch losses, so the
    /// training loop can log without re-evaluating the graph.
    pub fn meta_step_with_stats(
        &self,
        state: &MetaState<T>,
        batch: &[Episode<T>],
        workers: usize,
    ) -> Result<(MetaState<T>, StepStats), MetaError> {
        if batch.len() != self.params.meta_batch {
            return Err(MetaError::BatchSize {
                expected: self.params.meta_batch,
                got: batch.len(),
            });
        }
        let (query_sum, support_mean, theta_grads, alpha_grads) =
            self.meta_gradient(state, batch, workers)?;

        let lr = self.learning_rate_at(state.iteration);
        let mut new_state = state.clone();
        new_state.opt.step += 1;
        let step = new_state.opt.step;

        let mut slot = 0usize;
        for layer in new_state.weights.layers.iter_mut() {
            for (_, tensor) in layer.entries.iter_mut() {
                adam_update(
                    tensor,
                    &theta_grads[slot],
                    &mut new_state.opt.m[slot],
                    &mut new_state.opt.v[slot],
                    step,
                    lr,
                    &self.params.adam,
                );
                slot += 1;
            }
        }
        if self.params.trains_alpha() {
            let mut alpha_tensor =
                Tensor::from_parts(vec![new_state.alpha.len()], new_state.alpha.clone());
            let grad = Tensor::from_parts(vec![alpha_grads.len()], alpha_grads);
            adam_update(
                &mut alpha_tensor,
                &grad,
                &mut new_state.opt.m[slot],
                &mut new_state.opt.v[slot],
                step,
                lr,
                &self.params.adam,
            );
            new_state.alpha = alpha_tensor.into_data();
        }
        new_state.iteration += 1;
        let stats = StepStats {
            mean_query_loss: query_sum.as_f64() / batch.len() as f64,
            mean_support_loss: support_mean.as_f64(),
        };
        Ok((new_state, stats))
    }

    fn episode_grads(
        &self,
        state: &MetaState<T>,
        batch: &[Episode<T>],
        workers: usize,
    ) -> Result<Vec<EpisodeGrads<T>>, MetaError> {
        let run = |(index, episode): (usize, &Episode<T>)| -> Result<EpisodeGrads<T>, MetaError> {
            self.one_episode(state, episode)
                .map_err(|e| match e {
                    MetaError::Graph(GraphError::NonFinite { .. }) => {
                        MetaError::NonFiniteGradient { episode: index }
                    }
                    other => other,
                })
        };
        if workers > 1 && batch.len() > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.min(batch.len()))
                .build()
                .expect("thread pool");
            pool.install(|| {
                batch
                    .par_iter()
                    .enumerate()
                    .map(run)
                    .collect::<Result<Vec<_>, _>>()
            })
        } else {
            batch.iter().enumerate().map(run).collect()
        }
    }

    fn one_episode(
        &self,
        state: &MetaState<T>,
        episode: &Episode<T>,
    ) -> Result<EpisodeGrads<T>, MetaError> {
        if episode.ways != self.params.ways
            || episode.shots != self.params.shots
            || episode.queries_per_way != self.params.queries
        {
            return Err(MetaError::EpisodeShape {
                ways: episode.ways,
                shots: episode.shots,
            });
        }
        let mut b = Bindings::new();
        crate::net::bind_weights(&mut b, &state.weights);
        if self.params.mode == super::EngineMode::Lwau {
            for (i, &a) in state.alpha.iter().enumerate() {
                b.set(&alpha_leaf_name(i + 1), Tensor::scalar(a));
            }
        }
        b.set("support_x", episode.support_x.clone());
        b.set("support_y", Episode::labels_tensor(&episode.support_y));
        b.set("query_x", episode.query_x.clone());
        b.set("query_y", Episode::labels_tensor(&episode.query_y));

        let mut requests: Vec<NodeId> =
            vec![self.meta.query_loss, self.meta.initial_support_loss];
        requests.extend(self.meta.theta_grads.iter().map(|&(_, id)| id));
        requests.extend(self.meta.alpha_grads.iter().copied());
        let mut values = evaluate_nodes(&self.meta.graph, &b, &requests)?;

        let alpha_values: Vec<T> = values
            .split_off(2 + self.meta.theta_grads.len())
            .into_iter()
            .map(|t| t.item())
            .collect();
        let theta = values.split_off(2);
        Ok(EpisodeGrads {
            query_loss: values[0].item(),
            support_loss: values[1].item(),
            theta,
            alpha: alpha_values,
        })
    }
}
