//! Instrumentation probes: per-layer update proportions after adaptation,
//! representation sparsity, and the layer-freezing accuracy/latency sweep,
//! with deterministic CSV / text / graymap exports.

mod freeze;
mod proportion;
mod report;
mod sparsity;

pub use freeze::{freeze_sweep, FreezeRow, FreezeSweepReport, SweepSubject};
pub use proportion::{
    mean_update_proportions, update_proportion, LayerProportions, ProbeTask, ProportionReport,
};
pub use report::{export_report, format_sig6, write_pgm, Report, ReportFormat};
pub use sparsity::{activation_percentage, map_geometry, representation_probe, SparsityReport};

use thiserror::Error;

use super::meta::MetaError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("weight sets are not structurally comparable")]
    Mismatch,
    #[error("every layer's relative change is zero; update proportion undefined")]
    AllZero,
    #[error("representations must be post-relu (nonnegative); found {0}")]
    NegativeEntry(f64),
    #[error("representations must be [batch, length], got {0:?}")]
    BadShape(Vec<usize>),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
