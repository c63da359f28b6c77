//! The bilevel training loop: inner-loop adaptation with one learning rate
//! per layer, query-set evaluation of the adapted weights, and joint
//! meta-optimization of weights and learning rates by differentiating
//! through the inner updates.
//!
//! Two code paths produce the inner update. Training unrolls it inside one
//! differentiable graph ([`graphs`]) so the outer gradient is exact to
//! second order; evaluation replays it step by step on host tensors
//! ([`inner`]), which is also what gets timed for the freezing speedup. The
//! finite-difference oracle ([`gradcheck`]) ties the two together: it
//! perturbs the replayed path and must match the unrolled path's gradient.

mod adam;
mod baseline;
mod checkpoint;
mod evaluate;
mod gradcheck;
mod graphs;
mod inner;
mod state;
mod step;
mod train;

pub use adam::AdamParams;
pub use baseline::{adapt_baseline_head, train_conventional_baseline, BaselineParams};
pub use checkpoint::{load_state, peek_checkpoint_dtype, save_state, CHECKPOINT_MAGIC};
pub use evaluate::{evaluate, EvalOutcome, EvalRunOptions, Evaluator};
pub use gradcheck::{meta_gradient_check, MetaGradCheckReport};
pub use inner::{inner_update, query_loss, support_loss, Adapter, InnerTrace};
pub use gradcheck::standard_check;
pub use state::{AdamState, MetaState};
pub use step::{StepStats, Trainer};
pub use train::{train, TrainLogRow, TrainOptions, TrainOutcome, TrainPools};

use thiserror::Error;

use crate::data::DataError;
use crate::graph::GraphError;
use crate::io::ArchiveError;
use crate::net::NetError;

/// Which inner-update rule the engine runs.
///
/// `Lwau` carries the per-layer learning rates as differentiable graph
/// leaves; `Maml` folds one shared fixed rate into the graph as constants.
/// With alpha training disabled and uniform initialization the two must
/// produce bitwise-identical weight trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineMode {
    Lwau,
    Maml,
}

impl EngineMode {
    pub fn name(self) -> &'static str {
        match self {
            EngineMode::Lwau => "lwau",
            EngineMode::Maml => "maml",
        }
    }

    pub fn parse(s: &str) -> Option<EngineMode> {
        match s {
            "lwau" => Some(EngineMode::Lwau),
            "maml" => Some(EngineMode::Maml),
            _ => None,
        }
    }
}

/// Everything the training loop needs to know, independent of data source.
#[derive(Clone, Debug)]
pub struct TrainParams {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub inner_steps_train: usize,
    pub inner_steps_test: usize,
    pub alpha_init: f64,
    pub mode: EngineMode,
    /// Whether the per-layer rates join the outer trainable set. Forced
    /// off in `Maml` mode.
    pub alpha_trainable: bool,
    /// Exact second-order outer gradients (default). When off, inner
    /// gradients are treated as constants in the outer pass.
    pub second_order: bool,
    pub meta_lr: f64,
    pub meta_batch: usize,
    pub iterations: u64,
    pub l1_coefficient: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_period: u64,
    pub adam: AdamParams,
    /// Validation episodes per logging interval during training.
    pub val_episodes: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            ways: 5,
            shots: 1,
            queries: 15,
            inner_steps_train: 5,
            inner_steps_test: 10,
            alpha_init: 0.01,
            mode: EngineMode::Lwau,
            alpha_trainable: true,
            second_order: true,
            meta_lr: 0.001,
            meta_batch: 4,
            iterations: 60_000,
            l1_coefficient: 0.0,
            lr_decay_factor: 0.5,
            lr_decay_period: 10_000,
            adam: AdamParams::default(),
            val_episodes: 100,
        }
    }
}

impl TrainParams {
    /// The per-layer rates actually receive outer updates.
    pub fn trains_alpha(&self) -> bool {
        self.mode == EngineMode::Lwau && self.alpha_trainable
    }

    /// Report label for this configuration.
    pub fn mode_label(&self) -> &'static str {
        if self.trains_alpha() {
            "LWAU"
        } else {
            "MAML"
        }
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        if self.ways == 0 || self.shots == 0 || self.queries == 0 || self.meta_batch == 0 {
            return Err(MetaError::BadParams(
                "ways, shots, queries and meta_batch must be at least 1".into(),
            ));
        }
        if self.meta_lr < 0.0 || !self.meta_lr.is_finite() {
            return Err(MetaError::BadParams("meta_lr must be finite and nonnegative".into()));
        }
        if self.lr_decay_period == 0 {
            return Err(MetaError::BadParams("lr_decay_period must be at least 1".into()));
        }
        if self.mode == EngineMode::Maml && self.alpha_trainable {
            return Err(MetaError::BadParams(
                "maml mode fixes alpha; set alpha_trainable = false".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("invalid training parameters: {0}")]
    BadParams(String),
    #[error("meta batch has {got} episodes, config expects {expected}")]
    BatchSize { expected: usize, got: usize },
    #[error("episode {episode} produced a non-finite meta-gradient; step rejected")]
    NonFiniteGradient { episode: usize },
    #[error("alpha vector has {got} entries for a {expected}-layer network")]
    AlphaLength { expected: usize, got: usize },
    #[error("freeze_below {freeze} out of range: network has {layers} layers")]
    BadFreeze { freeze: usize, layers: usize },
    #[error("evaluation requires a validation or test pool, not the train split")]
    TrainPoolForEval,
    #[error("episode shape ({ways} ways, {shots} shots) does not match the adapter")]
    EpisodeShape { ways: usize, shots: usize },
    #[error(
        "checkpoint write to {path} failed ({source}); emergency copy: {emergency}"
    )]
    CheckpointWrite {
        path: String,
        emergency: String,
        #[source]
        source: Box<ArchiveError>,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}
