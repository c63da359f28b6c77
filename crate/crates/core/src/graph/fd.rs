//! Central finite differences, the independent ground truth that the
//! analytic gradients are checked against. Deliberately knows nothing about
//! the adjoint machinery: it only evaluates the graph forward.

use super::eval::{evaluate_nodes, Bindings};
use super::{Graph, GraphError, NodeId};
use crate::graph::GradientSet;
use crate::tensor::Tensor;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar output with respect to each
/// listed leaf: `(f(w+h) - f(w-h)) / 2h` per scalar entry. Double precision
/// only; the step must be positive.
pub fn finite_difference_oracle(
    graph: &Graph,
    loss_output: &str,
    wrt: &[&str],
    bindings: &Bindings<f64>,
    step: f64,
) -> Result<GradientSet<f64>, GraphError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let loss = graph.output(loss_output)?;

    let mut work = bindings.clone();
    let mut out = GradientSet::new();
    for name in wrt {
        let id = graph
            .leaf(name)
            .ok_or_else(|| GraphError::NoSuchLeaf(name.to_string()))?;
        let base = bindings
            .get(name)
            .ok_or_else(|| GraphError::UnboundLeaf(name.to_string()))?
            .clone();
        let mut grad = Tensor::zeros(graph.shape_of(id));
        for i in 0..base.len() {
            let plus = eval_with(graph, &mut work, name, &base, i, step, loss)?;
            let minus = eval_with(graph, &mut work, name, &base, i, -step, loss)?;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        work.set(name, base);
        out.insert(name.to_string(), grad);
    }
    Ok(out)
}

fn eval_with(
    graph: &Graph,
    work: &mut Bindings<f64>,
    name: &str,
    base: &Tensor<f64>,
    index: usize,
    delta: f64,
    loss: NodeId,
) -> Result<f64, GraphError> {
    let mut perturbed = base.clone();
    perturbed.data_mut()[index] += delta;
    work.set(name, perturbed);
    let values = evaluate_nodes(graph, work, &[loss])?;
    Ok(values[0].item())
}

/// Worst-case deviation between an analytic gradient set and its oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckSummary {
    /// Max relative error over entries whose oracle magnitude is at least
    /// `small_threshold`.
    pub max_rel_err: f64,
    /// Max absolute error over the remaining (near-zero) entries.
    pub max_abs_err_small: f64,
    pub entries: usize,
}

impl GradCheckSummary {
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel_err <= rel_tol && self.max_abs_err_small <= abs_tol
    }
}

/// Compares two gradient sets entry by entry. Entries where the oracle is
/// smaller than `small_threshold` in magnitude are compared absolutely,
/// since relative error is meaningless against a near-zero reference.
pub fn compare_gradients(
    analytic: &GradientSet<f64>,
    oracle: &GradientSet<f64>,
    small_threshold: f64,
) -> GradCheckSummary {
    let mut summary = GradCheckSummary::default();
    for (name, got) in analytic {
        let want = oracle
            .get(name)
            .unwrap_or_else(|| panic!("oracle missing gradient for {name:?}"));
        assert_eq!(got.shape(), want.shape(), "gradient shape for {name:?}");
        for (&g, &w) in got.data().iter().zip(want.data()) {
            summary.entries += 1;
            if w.abs() < small_threshold {
                summary.max_abs_err_small = summary.max_abs_err_small.max((g - w).abs());
            } else {
                summary.max_rel_err = summary.max_rel_err.max((g - w).abs() / w.abs());
            }
        }
    }
    summary
}
